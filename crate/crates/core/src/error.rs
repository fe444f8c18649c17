//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input data failed validation (non-finite values, bad ranges, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A row-level problem in an input file.
    #[error("{path}:{line}: {message}")]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    /// Estimation failed for one entity (bucket, truck or dump). Batch runs
    /// collect these into the error report instead of aborting.
    #[error("{entity} {id}: {message}")]
    Estimation {
        entity: &'static str,
        id: String,
        message: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn estimation(entity: &'static str, id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Estimation {
            entity,
            id: id.into(),
            message: message.into(),
        }
    }
}
