//! Speech enhancement with recurrent-convolutional U-nets.
//!
//! The crate is organised as a pipeline: [`data`] synthesises a corpus,
//! [`dsp`] turns waveforms into log-mel spectrograms and back, [`model`]
//! builds the networks, [`train`] fits them, [`pipeline`] enhances audio
//! with a trained network and [`metrics`] scores the result.

pub mod data;
pub mod dsp;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod train;
mod error;

pub use error::{CoreError, Result};
