use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("empty reduction: {0}")]
    EmptyReduction(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("hit and miss structuring elements intersect at {cells:?}")]
    IntersectingSe { cells: Vec<(usize, usize)> },

    #[error("structuring element has no active cells: {0}")]
    AllDnc(String),

    #[error("tape record belongs to layer {found}, expected layer {expected}")]
    TapeMismatch { expected: u64, found: u64 },

    #[error("variance model: {0}")]
    Variance(String),

    #[error("bad magic number 0x{found:08x} in {what}")]
    BadMagic { what: String, found: u32 },

    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated { what: String, expected: usize, found: usize },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite value first produced by layer `{layer}` at epoch {epoch}")]
    Diverged { layer: String, epoch: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::Invalid(format!($($arg)*)) };
}
pub(crate) use invalid;
pub(crate) use shape_err;
