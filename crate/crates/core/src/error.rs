use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty network for section {section} period {period}")]
    EmptyNetwork { section: u8, period: String },

    #[error("unknown node {0}")]
    UnknownNode(String),

    #[error("{0}")]
    Undefined(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("rank-deficient design: columns {0:?} are linearly dependent")]
    RankDeficient(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unimputable row {0}: every numeric value is missing")]
    UnimputableRow(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
