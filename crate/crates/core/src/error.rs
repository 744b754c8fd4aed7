use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GtmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GtmError {
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("non-finite value produced by {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GtmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GtmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        GtmError::Shape(msg.into())
    }
}
