use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("dimension mismatch: expected {expected} coordinates, found {found} (line {line})")]
    DimensionMismatch { expected: usize, found: usize, line: usize },

    #[error("duplicate location in fidelity {fidelity} at index {index}")]
    DuplicateLocation { fidelity: usize, index: usize },

    #[error("fidelity {0} has no locations")]
    EmptyFidelity(usize),

    #[error("fidelity {fidelity}: expected {expected} value columns, found {found}")]
    ColumnCount { fidelity: usize, expected: usize, found: usize },

    #[error("non-finite value in fidelity {fidelity}, replicate row {row}, column {col}")]
    NonFinite { fidelity: usize, row: usize, col: usize },

    #[error("inconsistent replicate counts across fidelities: {0:?}")]
    InconsistentReplicates(Vec<usize>),

    #[error("zero-variance column: fidelity {fidelity}, location {location}")]
    ZeroVariance { fidelity: usize, location: usize },

    #[error("requested {k} neighbors from a pool of {pool}")]
    TooManyNeighbors { k: usize, pool: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate kernel at fidelity {fidelity}, ordered location {index}: Cholesky failed after jitter")]
    DegenerateKernel { fidelity: usize, index: usize },

    #[error("non-finite gradient for fidelity {fidelity}, coordinate {coordinate}")]
    NonFiniteGradient { fidelity: usize, coordinate: &'static str },

    #[error("non-finite predictive density at fidelity {fidelity}, ordered location {index}")]
    NonFiniteDensity { fidelity: usize, index: usize },

    #[error("negative predictive variance {value:e} at fidelity {fidelity}, ordered location {index}")]
    NegativeVariance { fidelity: usize, index: usize, value: f64 },

    #[error("training diverged in fidelity {fidelity} at epoch {epoch} ({cause}); last finite parameters kept")]
    Diverged { fidelity: usize, epoch: usize, cause: String, last_finite: Vec<f64> },

    #[error("problem too large: {n} locations exceeds the cap of {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io { .. } => ErrorClass::Io,
            InvalidArgument(_) => ErrorClass::Usage,
            Parse { .. }
            | DimensionMismatch { .. }
            | DuplicateLocation { .. }
            | EmptyFidelity(_)
            | ColumnCount { .. }
            | NonFinite { .. }
            | InconsistentReplicates(_)
            | ZeroVariance { .. }
            | TooManyNeighbors { .. }
            | TooLarge { .. }
            | Json(_) => ErrorClass::Data,
            DegenerateKernel { .. }
            | NonFiniteGradient { .. }
            | NonFiniteDensity { .. }
            | NegativeVariance { .. }
            | Diverged { .. } => ErrorClass::Numerical,
        }
    }

    /// Process exit code: 2 usage, 3 data validation, 4 numerical failure, 1 i/o.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Io => 1,
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}
