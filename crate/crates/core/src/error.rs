use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },

    #[error("tensor backend: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for user or configuration problems, 2 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Ingest { .. }
            | Error::Config(_)
            | Error::Empty(_)
            | Error::UnknownNode(_)
            | Error::Split(_)
            | Error::Checkpoint(_) => 1,
            Error::Shape(_) | Error::NonFiniteLoss { .. } | Error::Tensor(_) | Error::Serde(_) => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
