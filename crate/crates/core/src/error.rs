use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("replay buffer has no occupied slots")]
    EmptyBuffer,

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}, row {row}: {message}")]
    Csv { path: PathBuf, row: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
