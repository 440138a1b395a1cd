use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Input violates a file format or a type invariant. `record` names the
    /// offending question (or envelope) and `field` the offending key.
    #[error("schema error in {record}, field `{field}`: {message}")]
    Schema {
        record: String,
        field: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} is out of range [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("infeasible size: {0}")]
    Infeasible(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("ill-conditioned matrix (condition estimate {0:e})")]
    IllConditioned(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("loss became NaN at epoch {epoch}")]
    NanLoss { epoch: usize },
}

impl Error {
    pub(crate) fn schema(record: impl Into<String>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            record: record.into(),
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn out_of_range(what: &'static str, value: usize, lo: usize, hi: usize) -> Self {
        Error::OutOfRange {
            what,
            value: value as i64,
            lo: lo as i64,
            hi: hi as i64,
        }
    }

    /// True for failures caused by malformed input files.
    pub fn is_schema(&self) -> bool {
        matches!(self, Error::Schema { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
