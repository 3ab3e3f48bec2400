use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: duplicate row at depth {depth}")]
    NonMonotoneDepth { path: PathBuf, depth: f64 },

    #[error("calibration curve ages must be strictly increasing (index {index})")]
    NonMonotoneAges { index: usize },

    #[error("calibration curve sigma must be positive (index {index}, value {value})")]
    NonPositiveSigma { index: usize, value: f64 },

    #[error("{value} lies outside the domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("kernel matrix is singular even after jitter {jitter:e}")]
    SingularSystem { jitter: f64 },

    #[error("kernel regression has no neighbors with positive weight at {query}")]
    EmptyNeighborhood { query: f64 },

    #[error("optimization failed: {0}")]
    OptimFailed(String),

    #[error("all particle weights vanished at chain step {step}")]
    DegenerateWeights { step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::EmptyNeighborhood { .. }
                | Error::OptimFailed(_)
                | Error::DegenerateWeights { .. }
        )
    }
}
