use thiserror::Error;

/// Errors raised by the core library.
///
/// Validation failures ([`Error::InvalidParameter`], [`Error::Unsupported`])
/// are distinguished from numerical failures so callers can map them to
/// different exit statuses.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("integration diverged at t = {t}: x = {x}, alpha = {alpha}")]
    Divergence { t: f64, x: f64, alpha: f64 },

    #[error("initial momenta {lo} and {hi} do not bracket the target endpoint")]
    NoBracket { lo: f64, hi: f64 },

    #[error(
        "shooting did not converge: terminal error {terminal_error} after {iterations} bisections"
    )]
    NoConvergence {
        terminal_error: f64,
        iterations: usize,
    },

    #[error("the chain reaches the bin of the target endpoint with probability zero")]
    ZeroConditioningMass,

    #[error("point {x} lies outside the grid [{xl}, {xr})")]
    OutOfDomain { x: f64, xl: f64, xr: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Unsupported(_) | Error::OutOfDomain { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
