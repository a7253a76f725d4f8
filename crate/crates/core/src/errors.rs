use thiserror::Error;

/// Errors produced by workload construction, strategy handling, and the mechanisms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("strategy is not full rank: {0}")]
    Rank(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("ingestion failed for attribute `{attribute}`: {reason}")]
    Ingestion { attribute: String, reason: String },

    #[error("workload is not separable: row {row} {reason}")]
    NotSeparable { row: usize, reason: String },

    #[error("missing dense rows: {0}")]
    MissingRows(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
