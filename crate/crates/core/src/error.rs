use thiserror::Error;

/// Errors raised across the crate.
///
/// `HypothesisUnmet` is kept apart from computational failures so that scan
/// scripts can tell an out-of-regime request from a broken run.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("hypothesis not satisfied: {0}")]
    HypothesisUnmet(String),

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("point outside the admissible region: {0}")]
    OutsideDomain(String),

    #[error("non-finite integrand value {value} at x = {x:?}, y = {y:?}")]
    NonFinite { x: Vec<f64>, y: Vec<f64>, value: f64 },

    #[error("work cap exceeded: {0}")]
    WorkCap(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
