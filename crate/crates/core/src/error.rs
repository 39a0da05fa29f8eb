use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated data: expected {expected} bytes of cells, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("grid alignment error: {0}")]
    Alignment(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("sampling error: not enough {class} pixels (need {needed}, have {available})")]
    Sampling {
        class: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
