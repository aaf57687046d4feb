use thiserror::Error;

/// Errors raised by the solvers and diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter failed validation; `key` names the offending input.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParameter { key: &'static str, reason: String },

    #[error("grid rejected: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Explicit stepping requested with a time step above the stability bound.
    #[error("time step {dt} exceeds the explicit stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    /// Zero pivot in the banded factorization.
    #[error("singular system at row {0}")]
    Singular(usize),

    /// Too many threshold crossings within a single step.
    #[error("particle {particle} aborted at t={time}: {crossings} crossings in one step (guard {guard})")]
    ParticleAborted { particle: u64, time: f64, crossings: u64, guard: u64 },

    #[error("{count} particle(s) aborted, first: {first}")]
    EnsembleAborted { count: usize, first: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(key: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { key, reason: reason.into() }
}
