use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, sizes or hyperparameters that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-finite value reached an operation that requires finite input.
    #[error("numerical fault: {0}")]
    Numerical(String),

    /// An API was called outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data violates the data model (out-of-vocabulary tokens, bad references, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("graph cannot be mutated: {0}")]
    UnmutableGraph(String),

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
