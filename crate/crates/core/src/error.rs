use std::path::PathBuf;

use thiserror::Error;

/// Errors raised when a caller breaks an operation's preconditions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row count mismatch: {what} has {got} rows, expected {expected}")]
    RowMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has norm {norm}, expected unit norm")]
    NotNormalized { row: usize, norm: f64 },
    #[error("row {0} is the zero vector and cannot be normalized")]
    ZeroVector(usize),
    #[error("labeled pool is empty")]
    EmptyLabeledPool,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("requested {requested} items but only {available} are available")]
    BudgetTooLarge { requested: usize, available: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Errors raised while reading or writing embedding, pairing and checkpoint files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{found} trailing bytes after payload")]
    TrailingBytes { found: usize },
    #[error("manifest lists {manifest} ids but header declares {header} rows")]
    CountMismatch { manifest: usize, header: usize },
    #[error("header declares dimension 0")]
    ZeroDimension,
    #[error("duplicate id `{0}` in manifest")]
    DuplicateId(String),
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid contents: {0}")]
    Invalid(#[from] ContractError),
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Errors surfaced by the experiment runner.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("seed {seed}, round {round}: {source}")]
    Round {
        seed: u64,
        round: usize,
        #[source]
        source: ContractError,
    },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: ContractError,
    },
    #[error("aggregation needs at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("round count mismatch for {label}: seed {seed} has {got} rounds, expected {expected}")]
    RoundMismatch {
        label: String,
        seed: u64,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = ContractError> = std::result::Result<T, E>;
