use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HardwallError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A point fell outside the tabulated range. Never extrapolated silently.
    #[error("value {x} outside grid [{lo}, {hi}] ({what})")]
    OutOfGrid { what: String, x: f64, lo: f64, hi: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
}

pub type Result<T> = std::result::Result<T, HardwallError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HardwallError::InvalidArgument(msg.into()))
}
