use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid neighborhood id {id} (mesh has {count} neighborhoods)")]
    InvalidNeighborhood { id: usize, count: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error("assembly error: non-positive weight {value} on cell {cell}")]
    Assembly { cell: usize, value: f64 },

    #[error("singular matrix ({context}): {detail}")]
    Singular { context: &'static str, detail: String },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("Newton iteration did not converge at time step {step}: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("run failed: {0}")]
    RunFailed(String),

    #[error("size mismatch reading {path}: expected {expected} values, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("invalid data in {path}: {detail}")]
    InvalidData { path: PathBuf, detail: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidNeighborhood { .. } => 2,
            Error::NewtonDivergence { .. } | Error::RunFailed(_) | Error::Singular { .. } | Error::Eigen(_) => 3,
            Error::Io(_) | Error::SizeMismatch { .. } | Error::InvalidData { .. } => 4,
            Error::Dimension { .. } | Error::NumericRange(_) | Error::Assembly { .. } => 3,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
