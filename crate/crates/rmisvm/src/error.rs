use std::io;
use std::path::PathBuf;

/// Errors produced by dataset I/O, configuration validation, and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed text input; `line` is 1-based.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset contains no instance lines")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    /// Invalid hyperparameters, generator settings, or CLI-level options.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Data that cannot support the requested computation, e.g. a single-class
    /// dataset handed to a trainer or a class with fewer bags than folds.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Ground truth or label vectors that do not line up with the dataset.
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
