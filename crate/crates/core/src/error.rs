use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state is not of X form: |rho[{row}][{col}]| = {magnitude:e}")]
    NotXForm { row: usize, col: usize, magnitude: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("degenerate environment: {0}")]
    DegenerateEnvironment(String),

    #[error("no stationary state: {0}")]
    NoStationaryState(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("ill-conditioned evaluation: {0}")]
    IllConditioned(String),

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("dense matrix needs {required} bytes, budget is {budget} bytes")]
    Budget { required: u64, budget: u64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by front ends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Resource,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::NotXForm { .. }
            | Error::InvalidState(_)
            | Error::DegenerateEnvironment(_)
            | Error::NoStationaryState(_)
            | Error::IllConditioned(_)
            | Error::Parse(_) => ErrorKind::Validation,
            Error::Convergence { .. } | Error::Singular(_) | Error::Eigen(_) => ErrorKind::Numerical,
            Error::Budget { .. } => ErrorKind::Resource,
            Error::Io(_) => ErrorKind::Io,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
