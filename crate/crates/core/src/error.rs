use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("KL divergence is infinite: q[{index}] = 0 where p[{index}] > 0")]
    InfiniteDivergence { index: usize },

    #[error("invalid stochastic matrix: {0}")]
    InvalidStochasticMatrix(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid task instance: {0}")]
    InvalidInstance(String),

    #[error("dataset mixes task families: expected {expected}, found {found} at instance {index}")]
    FamilyMismatch {
        expected: String,
        found: String,
        index: usize,
    },

    #[error("symbol id {id} outside {what} range {start}..{end}")]
    OutOfRange {
        what: &'static str,
        id: usize,
        start: usize,
        end: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
