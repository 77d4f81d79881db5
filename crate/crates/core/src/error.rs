use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TvsError>;

/// Errors raised by the selection library.
#[derive(Debug, Error)]
pub enum TvsError {
    /// A numeric or configuration parameter is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Inputs disagree structurally (index sets, dimensions).
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("malformed input in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TvsError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        TvsError::Parameter(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        TvsError::Structural(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TvsError::Io {
            path: path.into(),
            source,
        }
    }
}
