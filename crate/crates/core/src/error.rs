use std::path::PathBuf;

use rcunet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("unsupported sample rate conversion {from} Hz -> {to} Hz")]
    UnsupportedRate { from: u32, to: u32 },
    #[error("invalid input to {op}: {detail}")]
    InvalidInput { op: &'static str, detail: String },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (utterances {ids:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        ids: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::InvalidInput {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
