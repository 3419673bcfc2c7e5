use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("infeasible association: {0}")]
    InfeasibleAssociation(String),

    #[error("association not installed in the twin environment")]
    NoAssociation,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("problem too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("replay buffer holds {len} transitions, batch of {batch} requested")]
    BufferUnderfilled { len: usize, batch: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed spec file {path}: {message}")]
    Spec { path: PathBuf, message: String },

    #[error("snapshot format error at line {line}: {message}")]
    Snapshot { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
