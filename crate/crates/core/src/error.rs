use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid parameters: {0}")]
    InvalidParam(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no unique stationary distribution: {0}")]
    Stationary(String),
    #[error("non-finite emission density at t = {t}, state = {state}")]
    BadEmission { t: usize, state: usize },
    #[error("problem size guard: {0}")]
    TooLarge(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("optimizer failure: {0}")]
    Optim(String),
    #[error("bridge sampling failure: {0}")]
    Bridge(String),
    #[error("prior calibration infeasible: {0}")]
    Calibration(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
