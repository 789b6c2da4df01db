//! Inference-time scaling of step-wise generators by particle-based Monte
//! Carlo methods.
//!
//! The engine treats generation as a state-space model: a transition backend
//! proposes steps, a reward backend scores them, and particle filtering,
//! particle Gibbs, or parallel tempering concentrate compute on trajectories
//! the scorer favors without ever trusting it completely. Synthetic backends
//! with exact oracles (a discrete HMM and a noisy-reward tree task) verify the
//! machinery end to end; live model servers plug in through the gateway crate.

pub mod aggregate;
pub mod answer;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod resample;
pub mod rng;
pub mod ssm;
pub mod synthetic;
pub mod trace;

pub use aggregate::{aggregate, aggregate_values, weights_for, AggregationMode};
pub use answer::{accuracy, answers_equal, extract_boxed, normalize_answer, parse_numeric};
pub use baselines::{best_of_n, dvts, BestOfNOutcome, DvtsOutcome, RolloutRecord, SelectionRule};
pub use engine::{
    accept_swap, apply_transform, parallel_tempering, particle_filter, particle_gibbs, select_answer,
    swap_probability, BudgetAllocation, PFConfig, Selection, WeightTransform,
};
pub use error::{BackendError, EngineError, SyntheticError};
pub use resample::{multinomial_resample, sample_index, softmax_distribution, ResampleDistribution};
pub use ssm::{
    FinishReason, LineageEntry, Particle, ParticleStatus, Prompt, RewardBackend, Step, StepRewardVector,
    TransitionBackend, DEFAULT_SYSTEM_PROMPT, STEP_DELIMITER,
};
pub use trace::{
    EngineTelemetry, FilterOutcome, FinalTrace, GibbsOutcome, ReferenceChoice, RoundTrace, SwapDecision,
    TemperingOutcome,
};
