use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GemError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GemError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("need at least {k} points to form {k} clusters, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("document {0} is missing from the document store")]
    MissingDocument(usize),

    #[error("training set contains a single class")]
    SingleClass,

    #[error("evaluation set is empty")]
    EmptySet,

    #[error("bad magic in {0}")]
    BadMagic(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("row {row} has norm {norm} but the file is flagged as normalized")]
    NormFlagViolation { row: usize, norm: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GemError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GemError::Io {
            path: path.into(),
            source,
        }
    }
}
