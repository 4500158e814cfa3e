use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data or configuration violates a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown link id `{0}`")]
    UnknownLink(String),

    #[error("{layer}: shape mismatch: {detail}")]
    Shape { layer: String, detail: String },

    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,

    /// Non-finite loss, singular system or similar.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed record at line {line}: {detail}")]
    Parse { line: u64, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
