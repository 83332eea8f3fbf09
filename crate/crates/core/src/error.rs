use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("no pixel is marked by any annotator")]
    EmptyAnnotation,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("missing channel `{0}`")]
    Channel(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("recall is undefined: ground truth has no positive pixel")]
    UndefinedRecall,

    #[error("non-finite value at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
