use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric: |K[{row},{col}] - K[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {value:e} at index {index}")]
    NotPositiveSemidefinite { index: usize, value: f64 },

    #[error("cholesky factorization failed at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("singular basis: eigenvalue {value:e} at index {index} is not invertible")]
    SingularBasis { index: usize, value: f64 },

    #[error("constraint infeasible: epsilon {epsilon:e} is below the attainable floor {floor:e}")]
    ConstraintInfeasible { epsilon: f64, floor: f64 },

    #[error("root search did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn io_error(path: &std::path::Path, err: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
