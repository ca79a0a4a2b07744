//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solver, trainer and tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// A state vector contained NaN or infinity.
    #[error("non-finite state")]
    NonFiniteState,

    /// A caller-supplied argument violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A flat parameter or gradient vector did not match the network layout.
    #[error("parameter vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// A loss or gradient was requested over an empty collocation batch.
    #[error("empty collocation batch")]
    EmptyBatch,

    /// The adaptive integrator could not continue.
    #[error("integration failure at t={t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    /// A grid expected to be uniform was not.
    #[error("non-uniform time grid: spacing deviates at index {index}")]
    NonUniformGrid { index: usize },

    /// Two solution tables were expected to share a grid but do not.
    #[error("time grids differ at index {index}: {left} vs {right}")]
    GridMismatch { index: usize, left: f64, right: f64 },

    /// Training produced a NaN or infinite loss component.
    #[error("non-finite loss at epoch {epoch} in component {component}")]
    NonFiniteLoss { epoch: usize, component: &'static str },

    /// Run configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// A CSV document could not be parsed. Line numbers are 1-based.
    #[error("csv parse error at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
