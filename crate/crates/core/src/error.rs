use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping of errors, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },
    #[error("treatment column `{column}` has non-binary value {value} at row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("degenerate outcome range: lower {lower} must be below upper {upper}")]
    DegenerateRange { lower: f64, upper: f64 },
    #[error("outcome {value} at index {index} lies outside [{lower}, {upper}]")]
    OutOfRange {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("every learner in the library failed (last error: {0})")]
    AllLearnersFailed(String),
    #[error("matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("invalid score: {0}")]
    InvalidScore(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Csv(_) => ErrorClass::Io,
            Error::NonConvergence(_)
            | Error::Singular(_)
            | Error::AllLearnersFailed(_)
            | Error::NotPsd(_) => ErrorClass::Numeric,
            _ => ErrorClass::Validation,
        }
    }
}
