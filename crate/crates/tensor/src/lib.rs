//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Ops are recorded on a [`Tape`] as they execute; [`Tape::backward`] sweeps
//! the record in reverse and produces [`Gradients`]. The op set covers what
//! convolutional-recurrent spectrogram networks need: "same" and transposed
//! convolutions, 2x2 max-pooling, ELU, batch normalization, fused GRU/LSTM
//! sequences, concatenation and L1 losses. [`ParamStore`] holds named
//! parameters with their Adam moments.

mod error;
mod gemm;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod param;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use optim::{clip_gradients, clip_store, Adam, ClipScope};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
