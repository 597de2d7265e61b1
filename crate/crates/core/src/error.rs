use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: &'static str, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        line: Option<usize>,
    },

    #[error("oracle does not cover pair id {0}")]
    MissingOracle(u64),

    #[error("unknown pair id {0}")]
    UnknownId(u64),

    #[error("no label for pair id {0}")]
    MissingLabel(u64),

    #[error("annotation queue timed out with {remaining} labels outstanding")]
    QueueTimeout { remaining: usize },

    #[error("annotation session closed")]
    SessionClosed,

    #[error("target agreement {target:.4} unreachable: mask alone caps agreement at {cap:.4}")]
    UnreachableTarget { target: f64, cap: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },

    #[error("curve too short for landmark detection: {len} < {min}")]
    TooShortCurve { len: usize, min: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument { .. }
                | Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::MissingOracle(_)
                | Error::UnknownId(_)
                | Error::MissingLabel(_)
                | Error::UnreachableTarget { .. }
                | Error::Json(_)
        )
    }
}
