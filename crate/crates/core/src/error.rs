use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// Variants fall into three families that the CLI maps onto exit codes:
/// I/O, data (format or contract violations) and numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("class {class} has {available} train records, need {required}")]
    InsufficientRecords {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-norm vector in {0}")]
    ZeroNorm(String),

    #[error("no positive pair exists for any anchor")]
    NoPositivePairs,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("record {id} has no label-word log-probabilities")]
    MissingLogProbs { id: String },

    #[error("scorer {0} missing from ensemble input")]
    MissingScorer(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroNorm(_) | Error::NonFinite(_) | Error::NoPositivePairs
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
