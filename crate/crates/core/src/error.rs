use thiserror::Error;

/// Crate-wide error type.  The variants map onto the CLI exit codes:
/// `InvalidInput` is a configuration/precondition problem, everything else
/// that can surface from a computation is a numerical or resolution failure.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs failed (bad mixture, size mismatch, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A field violates a structural constraint (loop sums, windings, ...).
    #[error("inconsistent field: {what} at {location} has defect {defect:e}")]
    Inconsistent {
        what: &'static str,
        location: String,
        defect: f64,
    },

    /// An iterative solver ran out of its iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Floating-point trouble: instability, non-monotone decay, and friends.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The requested quantity is not resolvable at this lattice size / range.
    #[error("resolution limit: {0}")]
    Resolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
