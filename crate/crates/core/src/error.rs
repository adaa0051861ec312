use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-uniform spacing at row {row}: expected step {expected}, found gap {found} (timestamp {timestamp})")]
    Spacing {
        row: usize,
        expected: i64,
        found: i64,
        timestamp: i64,
    },

    #[error("duplicate timestamp {timestamp} at row {row}")]
    DuplicateTimestamp { row: usize, timestamp: i64 },

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cleaning failed: {0}")]
    Cleaning(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("misaligned inputs: {0}")]
    Alignment(String),

    #[error("too few excesses: {found} (need at least {required})")]
    InsufficientExcess { found: usize, required: usize },

    #[error("attribution failed: {0}")]
    Attribution(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid frame: {0}")]
    Invariant(String),
}
