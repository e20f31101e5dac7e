use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unsupported error-model family: {0}")]
    UnsupportedFamily(String),

    #[error("exact mode requires realized perception errors")]
    MissingRealizedErrors,

    #[error("search space too large for exhaustive enumeration: {0} sequences")]
    TooLarge(f64),

    #[error("solver did not converge: {0}")]
    ConvergenceFailure(String),

    #[error("Phi_c is singular for epsilon_tilde = {0:e}")]
    SingularPhiC(f64),

    #[error("quadratic form is not convex (min eigenvalue {min_eigenvalue:e})")]
    NotConvex { min_eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn dims(msg: impl Into<String>) -> Error {
    Error::DimensionMismatch(msg.into())
}
