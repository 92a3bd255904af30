use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("domain error at step {step}: {message}")]
    DomainAtStep { step: usize, message: String },

    #[error("integration diverged at step {step}: non-finite state")]
    Diverged { step: usize },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("eigensolver: {0}")]
    Eigen(String),

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {message} (byte offset {offset})")]
    Corrupt { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
