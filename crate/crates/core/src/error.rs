use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("input cost R is not positive definite (minimum eigenvalue {min_eig:e})")]
    InputCostNotPd { min_eig: f64 },

    #[error("state cost Q is not positive semidefinite (minimum eigenvalue {min_eig:e})")]
    StateCostNotPsd { min_eig: f64 },

    #[error("matrix {what} is not symmetric (max asymmetry {asym:e})")]
    NotSymmetric { what: &'static str, asym: f64 },

    #[error("matrix {what} is not positive semidefinite (minimum eigenvalue {min_eig:e})")]
    NotPsd { what: &'static str, min_eig: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty sample set")]
    EmptySamples,

    #[error("correlation parameter rho={0} outside [-1, 1]")]
    RhoOutOfRange(f64),

    #[error("I + K G^-1 F is singular (condition number {cond:e})")]
    SingularClosedLoop { cond: f64 },

    #[error("policy gain has {count} nonzero entries outside the causal pattern, first at {first:?}")]
    MaskViolation { count: usize, first: (usize, usize) },

    #[error("inner solve did not reach tolerance {tol:e} in {iters} iterations (relative residual {residual:e})")]
    InnerSolveFailed { tol: f64, iters: usize, residual: f64 },

    #[error("dual update precondition violated: lambda_min(L2 + step - Sigma_hat) = {min_eig:e}")]
    ConeInvariant { min_eig: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("Schatten order p={0} is not supported here")]
    UnsupportedOrder(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("parse error in {file}: {reason}")]
    Parse { file: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn dim(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration and input problems map to 2, numerical failures to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InputCostNotPd { .. }
            | Error::SingularClosedLoop { .. }
            | Error::InnerSolveFailed { .. }
            | Error::ConeInvariant { .. }
            | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
