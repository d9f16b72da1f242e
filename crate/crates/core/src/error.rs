use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state blew up at step {index}")]
    BlowUp { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("trajectories are not comparable: {0}")]
    Incomparable(String),

    #[error("time {t} is outside the trajectory range [0, {end}]")]
    TimeOutOfRange { t: f64, end: f64 },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("quadrature did not settle: last two estimates differ by {difference:e} at {nodes} nodes")]
    Quadrature { nodes: usize, difference: f64 },

    #[error("unsupported sine moment order {0} (supported: 1..=4)")]
    UnsupportedMoment(u32),

    #[error("residual identity fails at step {index} (gap {gap:e}): replay does not match the trajectory")]
    ResidualMismatch { index: usize, gap: f64 },

    #[error("no stable step size: {0}")]
    Unstable(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
