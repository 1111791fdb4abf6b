use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate density: covariance is singular")]
    DegenerateDensity,

    #[error("innovation covariance is singular at t = {t}")]
    SingularInnovation { t: usize },

    #[error("observation noise covariance is singular at t = {t}")]
    SingularObservationNoise { t: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("all particle weights vanished at t = {t}")]
    ParticleDegeneracy { t: usize },

    #[error("fixed-lag smoothing needs {needed} stored steps, only {available} available")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("trace holds no retained iterations")]
    EmptyTrace,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
