//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A vector or dataset dimension does not match what the operation expects.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A linear system could not be solved or a computation degenerated.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Monte-Carlo calibration could not reach the requested target.
    #[error("calibration failed: {0}")]
    Calibration(String),

    /// A metric is undefined on the given data (e.g. no comparable pairs).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// Malformed input file contents.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
