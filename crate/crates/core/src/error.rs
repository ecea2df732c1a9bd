use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty-log")]
    EmptyLog,

    #[error("no-splittable-users")]
    NoSplittableUsers,

    #[error("config error: {0}")]
    Config(String),

    #[error("codebook-underfilled: {items} items cannot fill {centroids} centroids")]
    CodebookUnderfilled { items: usize, centroids: usize },

    #[error("id-space-exhausted: no free last-level code for prefix {prefix:?} (use a larger codebook)")]
    IdSpaceExhausted { prefix: Vec<usize> },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty-history")]
    EmptyHistory,

    #[error("numerical-overflow")]
    NumericalOverflow,

    #[error("diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Diverged {
        epoch: usize,
        last_finite: Option<usize>,
    },

    #[error("invalid token {token} for vocabulary of size {vocab}")]
    InvalidToken { token: usize, vocab: usize },

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
