//! Reward aggregation: collapse a trajectory's step-reward history into one
//! scalar weight per particle.
//!
//! Weights are recomputed from the full partial trajectory every round rather
//! than maintained incrementally. `min`, `last`, and `model` cannot be updated
//! online, and recomputation keeps all four modes consistent through
//! resampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::rng::{derive_rng, stream};
use crate::ssm::{Particle, Prompt, RewardBackend, StepRewardVector};

/// Strategy for collapsing step rewards into a particle weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Product of all step rewards.
    Prod,
    /// Minimum step reward.
    Min,
    /// Reward of the final step.
    Last,
    /// A single whole-trajectory score from the reward model, used as-is.
    Model,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            AggregationMode::Prod => "prod",
            AggregationMode::Min => "min",
            AggregationMode::Last => "last",
            AggregationMode::Model => "model",
        };
        f.write_str(name)
    }
}

impl FromStr for AggregationMode {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prod" => Ok(AggregationMode::Prod),
            "min" => Ok(AggregationMode::Min),
            "last" => Ok(AggregationMode::Last),
            "model" => Ok(AggregationMode::Model),
            other => Err(EngineError::InvalidConfig(format!(
                "unknown aggregation mode '{other}' (expected prod, min, last, or model)"
            ))),
        }
    }
}

/// Collapse a reward vector under `mode`. `whole_score` must be present
/// exactly when `mode` is [`AggregationMode::Model`].
pub fn aggregate(
    rewards: &StepRewardVector,
    mode: AggregationMode,
    whole_score: Option<f64>,
) -> Result<f64, EngineError> {
    aggregate_values(rewards.values(), mode, whole_score)
}

/// Slice form of [`aggregate`], used where reward prefixes are aggregated.
pub fn aggregate_values(
    values: &[f64],
    mode: AggregationMode,
    whole_score: Option<f64>,
) -> Result<f64, EngineError> {
    if values.is_empty() {
        return Err(EngineError::EmptyRewards);
    }
    match (mode, whole_score) {
        (AggregationMode::Prod, None) => Ok(values.iter().product()),
        (AggregationMode::Min, None) => Ok(values.iter().copied().fold(f64::INFINITY, f64::min)),
        (AggregationMode::Last, None) => Ok(*values.last().expect("non-empty")),
        (AggregationMode::Model, Some(score)) => Ok(score),
        (AggregationMode::Model, None) => Err(EngineError::MissingWholeScore),
        (_, Some(_)) => Err(EngineError::UnexpectedWholeScore),
    }
}

/// One weight per particle, computed from each particle's full partial
/// trajectory at the current round.
///
/// For [`AggregationMode::Model`] this issues one `score_whole` call per
/// active particle; finished particles reuse their cached final score, which
/// is written back here the first time a finished particle is scored.
/// Backend failures carry the offending particle index.
pub fn weights_for(
    prompt: &Prompt,
    particles: &mut [Particle],
    mode: AggregationMode,
    backend: Option<&dyn RewardBackend>,
    scoring_seed: u64,
) -> Result<Vec<f64>, EngineError> {
    if particles.is_empty() {
        return Err(EngineError::EmptyParticleSet);
    }
    let mut weights = Vec::with_capacity(particles.len());
    for (index, particle) in particles.iter_mut().enumerate() {
        if particle.step_rewards().is_empty() {
            return Err(EngineError::EmptyRewards);
        }
        let weight = match mode {
            AggregationMode::Model => {
                let backend = backend.ok_or(EngineError::MissingWholeScore)?;
                match particle.whole_score_cache() {
                    Some(cached) if particle.is_finished() => cached,
                    _ => {
                        let mut rng = derive_rng(scoring_seed, &[stream::WHOLE_SCORE, index as u64]);
                        let score = backend
                            .score_whole(prompt, particle.steps(), &mut rng)
                            .map_err(|e| EngineError::backend(index, e))?;
                        if particle.is_finished() {
                            particle.set_whole_score(score);
                        }
                        score
                    }
                }
            }
            _ => aggregate_values(particle.step_rewards(), mode, None)?,
        };
        if !weight.is_finite() {
            return Err(EngineError::NonFiniteWeight { index, value: weight });
        }
        weights.push(weight);
    }
    Ok(weights)
}
