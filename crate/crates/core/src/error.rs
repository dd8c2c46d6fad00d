use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
///
/// Variants fall in two families: configuration problems (a request that can
/// never succeed for the given parameters) and data problems (the inputs do
/// not satisfy a precondition). [`Error::is_config`] tells them apart, which
/// the command line tool uses to pick an exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has {found} values, expected {expected}")]
    RowWidth { row: usize, expected: usize, found: usize },

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: usize, message: String },

    #[error("truncated binary file: expected {expected} bytes at offset {offset}")]
    Truncated { offset: u64, expected: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("class {class} has {found} rows, needs at least {needed}")]
    InsufficientRows { class: i64, found: usize, needed: usize },

    #[error("need at least {needed} classes, found {found}")]
    InsufficientClasses { needed: usize, found: usize },

    #[error("zero-norm row {row}")]
    ZeroNorm { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid class weights: {0}")]
    InvalidWeights(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("enumeration too large: {size} outcomes exceeds the limit of {limit}")]
    EnumerationTooLarge { size: u128, limit: u128 },

    #[error("episode {episode}: {source}")]
    Episode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True when the error comes from a request that is invalid regardless of
    /// the data (bad flags, unsupported transform/shot combinations).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::InvalidEnsemble(_) | Error::InvalidWeights(_) => true,
            Error::Episode { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
