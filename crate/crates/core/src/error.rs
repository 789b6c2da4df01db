//! Error types shared across the engine, backends, and synthetic tasks.

use thiserror::Error;

/// Failures raised by transition or reward backends.
///
/// Live backends surface transport and protocol problems here; synthetic
/// backends only raise [`BackendError::Protocol`] when fed trajectories they
/// did not produce.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("retries exhausted after {attempts} attempts (request {request_id}): {last_error}")]
    RetriesExhausted {
        attempts: u32,
        request_id: String,
        last_error: String,
    },

    /// A score crossed the gateway boundary that is NaN, infinite, or outside
    /// the admissible range.
    #[error("invalid score from backend: {0}")]
    InvalidScore(String),
}

/// Errors from the inference engine and its supporting operations.
#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty particle set")]
    EmptyParticleSet,

    #[error("reward vector is empty: no step has been scored yet")]
    EmptyRewards,

    #[error("non-finite weight {value} at index {index}")]
    NonFiniteWeight { index: usize, value: f64 },

    #[error("softmax temperature must be > 0, got {0}")]
    NonPositiveTemperature(f64),

    #[error("cannot extend a finished particle")]
    ExtendFinished,

    #[error("a step may have empty text only when it terminates the trajectory")]
    EmptyStepText,

    #[error("model aggregation requires a whole-trajectory score")]
    MissingWholeScore,

    #[error("whole-trajectory score supplied for non-model aggregation")]
    UnexpectedWholeScore,

    #[error("reference particle must be finished")]
    UnfinishedReference,

    #[error("backend failure at particle {particle}: {source}")]
    Backend {
        particle: usize,
        source: BackendError,
    },
}

impl EngineError {
    /// Attach the particle index to a backend failure.
    pub fn backend(particle: usize, source: BackendError) -> Self {
        EngineError::Backend { particle, source }
    }
}

/// Errors from synthetic task construction and oracles.
#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("row {row} of {matrix} sums to {sum}, expected 1 within 1e-12")]
    NotRowStochastic {
        matrix: &'static str,
        row: usize,
        sum: f64,
    },

    #[error("observation sequence has zero likelihood at time {time}")]
    ImpossibleObservation { time: usize },

    #[error("invalid observations: {0}")]
    InvalidObservations(String),
}
