use thiserror::Error;

/// Errors raised by the state, channel and bound computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid mode selection: {0}")]
    InvalidModes(String),
    #[error("non-physical state: {0}")]
    NonPhysical(String),
    #[error("non-finite overlap {value} at s = {s}")]
    NonFinite { s: f64, value: f64 },
    #[error("Fock truncation deficit {deficit:e} exceeds {tolerance:e}")]
    Truncation { deficit: f64, tolerance: f64 },
    #[error("Fock space of dimension {requested} exceeds the budget of {budget}")]
    Budget { requested: usize, budget: usize },
    #[error("clamped negative eigenvalue mass {0:e} exceeds 1e-8")]
    NegativeMass(f64),
    #[error("probe coefficients are not normalized (sum of squares = {0})")]
    Unnormalized(f64),
    #[error("optimizer failed: {0}")]
    NoConvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_param(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value, reason })
    }
}
