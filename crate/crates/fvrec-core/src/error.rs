//! Error type shared across the crate.
//!
//! The CLI maps variants to exit codes: config errors exit 2, data errors
//! exit 3, numeric/training/metric failures exit 4.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed record in an input file.
    #[error("parse error: {file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    /// Dataset-level problem (empty result, missing file, vocabulary mismatch,
    /// stratification failure).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid or unknown configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure (singular matrix, non-finite value).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A metric is undefined on the given input.
    #[error("metric error: {0}")]
    Metric(String),

    /// Training failure (non-finite gradient or loss).
    #[error("training error: {0}")]
    Train(String),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Data(_) => 3,
            Error::Shape(_) | Error::Numeric(_) | Error::Metric(_) | Error::Train(_) => 4,
        }
    }
}
