use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// A parameter is out of range or inconsistent with the data.
    Usage,
    /// Unreadable, malformed or invalid input data.
    Data,
    /// The data was valid but a pipeline stage could not complete.
    Pipeline,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed input at {location}: {message}")]
    Format { location: String, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("class {class} has {size} samples, below the minimum of {minimum}")]
    ClassTooSmall {
        class: usize,
        size: usize,
        minimum: usize,
    },

    #[error("class {0} has no remaining samples")]
    EmptyClass(usize),

    #[error("{0}")]
    Pipeline(String),
}

impl Error {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_)
            | Error::Format { .. }
            | Error::InvalidDataset(_)
            | Error::InvalidIndexSet(_)
            | Error::DimensionMismatch { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::InvalidParameter(_) => ErrorKind::Usage,
            Error::ClassTooSmall { .. }
            | Error::EmptyClass(_)
            | Error::Pipeline(_) => ErrorKind::Pipeline,
        }
    }
}
