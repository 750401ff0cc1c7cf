use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("divergence: non-finite state at step {step}")]
    Divergence { step: u64 },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
