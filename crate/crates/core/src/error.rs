use autodiff::AdError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("particle {0} has not been evaluated")]
    UnevaluatedParticle(usize),
    #[error("non-finite step for particle {particle} at iteration {iteration}")]
    NonFiniteStep { particle: usize, iteration: usize },
    #[error("non-finite value in stage `{stage}` at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },
    #[error("kriging system is singular: samples {first} and {second} coincide")]
    DuplicatePoints { first: usize, second: usize },
    #[error("initial posterior entropy must be positive, got {0}")]
    DegenerateEntropy(f64),
    #[error("posterior weights underflow for rho = {rho}; rho is too large")]
    RhoTooLarge { rho: f64 },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
}
