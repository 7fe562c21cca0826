use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FstError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FstError {
    /// Operand shapes are incompatible for the requested op.
    #[error("dimension error: {0}")]
    Shape(String),

    /// A documented precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A malformed on-disk artifact (bad magic, truncated payload, ...).
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl FstError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FstError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        FstError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
