mod activation;
mod basic;
mod conv;
mod loss;
mod norm;
mod pool;
pub(crate) mod recurrent;

pub use activation::{elu, sigmoid, tanh};
pub use basic::{
    add, concat, index_select, linear, mean, mul, mul_const, narrow, reshape, scale, sub, sum, transpose_hw,
};
pub use conv::{conv2d, conv_transpose2d};
pub use loss::{l1_loss, masked_l1_loss};
pub use norm::{batchnorm, BatchNormMode, BatchStats, RunningStats, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use pool::maxpool2x2;
pub use recurrent::{gru_seq, lstm_seq, GruWeights, LstmWeights};
