//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgError {
    /// Tensor/parameter extents do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid generator, split, or experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract (e.g. backward from a
    /// non-scalar node).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl DgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DgError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DgError>;
