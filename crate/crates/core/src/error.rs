use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("codes referenced without a description: {}", .0.join(", "))]
    MissingDescriptions(Vec<String>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label space overflow: {positives} unique positive codes exceed |L| = {capacity}; raise --label-space-size or lower the batch size")]
    LabelSpaceOverflow { positives: usize, capacity: usize },

    #[error("vocabulary mismatch: expected hash {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for numerical failure.
    /// Usage errors (exit 1) are raised by the argument parser before any of these exist.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
