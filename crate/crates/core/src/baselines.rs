//! Budget-matched comparison methods: best-of-N, weighted best-of-N, and a
//! parallel-subtree beam search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_values, AggregationMode};
use crate::error::EngineError;
use crate::rng::{derive_rng, stream};
use crate::ssm::{Particle, Prompt, RewardBackend, Step, TransitionBackend};
use crate::trace::EngineTelemetry;

/// How best-of-N picks its winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionRule {
    /// Highest whole-trajectory score.
    Bon,
    /// Group rollouts by canonical answer, sum scores per group, return the
    /// best-scored rollout of the winning group.
    Wbon,
}

/// One complete rollout with its whole-trajectory score and parsed answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub particle: Particle,
    pub whole_score: f64,
    pub answer: Option<String>,
}

/// Result of [`best_of_n`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestOfNOutcome {
    pub winner: usize,
    pub rollouts: Vec<RolloutRecord>,
    /// Set when no rollout produced a parseable answer; the winner is then
    /// simply the best-scored rollout.
    pub parse_failure: bool,
    pub telemetry: EngineTelemetry,
}

impl BestOfNOutcome {
    pub fn winning_particle(&self) -> &Particle {
        &self.rollouts[self.winner].particle
    }
}

/// Roll out one complete trajectory, then score all steps in a single call.
fn complete_rollout(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    max_steps: usize,
    seed: u64,
    tag: &[u64],
) -> Result<(Particle, f64), EngineError> {
    let index = *tag.last().unwrap_or(&0) as usize;
    let mut gen_rng = derive_rng(seed, &[&[stream::ROLLOUT], tag].concat());
    let mut steps: Vec<Step> = Vec::new();
    loop {
        let step = if steps.is_empty() {
            transition.init_step(prompt, &mut gen_rng)
        } else {
            transition.next_step(prompt, &steps, &mut gen_rng)
        }
        .map_err(|e| EngineError::backend(index, e))?;
        let terminal = step.is_terminal();
        steps.push(step);
        if terminal || steps.len() >= max_steps {
            break;
        }
    }
    let mut score_rng = derive_rng(seed, &[&[stream::SCORE, stream::ROLLOUT], tag].concat());
    let vector = reward
        .score_steps(prompt, &steps, &mut score_rng)
        .map_err(|e| EngineError::backend(index, e))?;
    let mut whole_rng = derive_rng(seed, &[&[stream::WHOLE_SCORE, stream::ROLLOUT], tag].concat());
    let whole = reward
        .score_whole(prompt, &steps, &mut whole_rng)
        .map_err(|e| EngineError::backend(index, e))?;
    let mut particle = Particle::from_scored(steps, vector.values().to_vec(), max_steps)?;
    particle.set_whole_score(whole);
    Ok((particle, whole))
}

/// Generate `n` independent complete rollouts and select one.
///
/// `answer_of` maps a finished trajectory to its canonical answer; rollouts
/// it cannot parse form singleton groups under [`SelectionRule::Wbon`].
#[allow(clippy::too_many_arguments)]
pub fn best_of_n(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    n: usize,
    rule: SelectionRule,
    max_steps: usize,
    seed: u64,
    answer_of: &dyn Fn(&Particle) -> Option<String>,
) -> Result<BestOfNOutcome, EngineError> {
    if n == 0 {
        return Err(EngineError::InvalidConfig("n must be at least 1".into()));
    }
    let mut rollouts = Vec::with_capacity(n);
    let mut telemetry = EngineTelemetry::default();
    for i in 0..n {
        let (particle, whole_score) = complete_rollout(prompt, transition, reward, max_steps, seed, &[i as u64])?;
        telemetry.generation_calls += particle.len() as u64;
        telemetry.scoring_calls += 2; // one per-step pass plus one whole score
        let answer = answer_of(&particle);
        rollouts.push(RolloutRecord {
            particle,
            whole_score,
            answer,
        });
    }

    let argmax_score = rollouts
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.whole_score
                .partial_cmp(&b.whole_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia)) // ties break to the lowest index
        })
        .map(|(i, _)| i)
        .expect("n >= 1");

    let parse_failure = rollouts.iter().all(|r| r.answer.is_none());
    let winner = match rule {
        SelectionRule::Bon => argmax_score,
        SelectionRule::Wbon => {
            if parse_failure {
                argmax_score
            } else {
                // Sum scores per canonical answer; unparseable rollouts are
                // their own groups.
                let mut groups: HashMap<String, (f64, usize)> = HashMap::new();
                for (i, rollout) in rollouts.iter().enumerate() {
                    let key = rollout
                        .answer
                        .clone()
                        .unwrap_or_else(|| format!("__unparsed_{i}"));
                    let entry = groups.entry(key).or_insert((0.0, i));
                    entry.0 += rollout.whole_score;
                    if rollouts[entry.1].whole_score < rollout.whole_score {
                        entry.1 = i;
                    }
                }
                groups
                    .into_iter()
                    .max_by(|(ka, (sa, ba)), (kb, (sb, bb))| {
                        sa.partial_cmp(sb)
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(bb.cmp(ba))
                            .then_with(|| kb.cmp(ka))
                    })
                    .map(|(_, (_, best))| best)
                    .expect("n >= 1")
            }
        }
    };

    Ok(BestOfNOutcome {
        winner,
        rollouts,
        parse_failure,
        telemetry,
    })
}

/// Result of [`dvts`]: one finished leaf per subtree and the winning index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvtsOutcome {
    pub winner: usize,
    pub leaves: Vec<RolloutRecord>,
    pub telemetry: EngineTelemetry,
}

impl DvtsOutcome {
    pub fn winning_particle(&self) -> &Particle {
        &self.leaves[self.winner].particle
    }
}

/// Parallel-subtree beam search. `n_total / subtree_width` independent
/// subtrees each grow greedily: at every level the current prefix expands
/// into `subtree_width` sampled candidate steps, and the candidate with the
/// highest aggregated reward survives, deterministically (ties break to the
/// lowest candidate index). The final answer is the best-scored leaf across
/// subtrees. No randomness is consumed after generation.
#[allow(clippy::too_many_arguments)]
pub fn dvts(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    n_total: usize,
    subtree_width: usize,
    aggregation: AggregationMode,
    max_steps: usize,
    seed: u64,
    answer_of: &dyn Fn(&Particle) -> Option<String>,
) -> Result<DvtsOutcome, EngineError> {
    if subtree_width == 0 || n_total == 0 {
        return Err(EngineError::InvalidConfig("n_total and subtree_width must be at least 1".into()));
    }
    if !n_total.is_multiple_of(subtree_width) {
        return Err(EngineError::InvalidConfig(format!(
            "subtree_width {subtree_width} does not divide n_total {n_total}"
        )));
    }
    if aggregation == AggregationMode::Model {
        return Err(EngineError::InvalidConfig(
            "model aggregation is not defined for beam expansion ranking".into(),
        ));
    }
    let n_subtrees = n_total / subtree_width;
    let mut leaves = Vec::with_capacity(n_subtrees);
    let mut telemetry = EngineTelemetry::default();

    for subtree in 0..n_subtrees {
        let mut steps: Vec<Step> = Vec::new();
        let mut rewards: Vec<f64> = Vec::new();
        loop {
            let level = steps.len() as u64;
            // Expand: subtree_width sampled candidate continuations.
            let mut best: Option<(usize, f64, Step, f64)> = None;
            for candidate in 0..subtree_width {
                let tags = [stream::DVTS, subtree as u64, level, candidate as u64];
                let mut gen_rng = derive_rng(seed, &tags);
                let step = if steps.is_empty() {
                    transition.init_step(prompt, &mut gen_rng)
                } else {
                    transition.next_step(prompt, &steps, &mut gen_rng)
                }
                .map_err(|e| EngineError::backend(subtree, e))?;
                telemetry.generation_calls += 1;

                let mut scored = steps.clone();
                scored.push(step.clone());
                let mut score_rng = derive_rng(seed, &[&[stream::SCORE], &tags[..]].concat());
                let vector = reward
                    .score_steps(prompt, &scored, &mut score_rng)
                    .map_err(|e| EngineError::backend(subtree, e))?;
                telemetry.scoring_calls += 1;
                let step_reward = vector.last().ok_or(EngineError::EmptyRewards)?;
                let mut candidate_rewards = rewards.clone();
                candidate_rewards.push(step_reward);
                let aggregated = aggregate_values(&candidate_rewards, aggregation, None)?;

                // Deterministic argmax over the expansion.
                if best.as_ref().is_none_or(|(_, w, _, _)| aggregated > *w) {
                    best = Some((candidate, aggregated, step, step_reward));
                }
            }
            let (_, _, step, step_reward) = best.expect("subtree_width >= 1");
            let terminal = step.is_terminal();
            steps.push(step);
            rewards.push(step_reward);
            if terminal || steps.len() >= max_steps {
                break;
            }
        }
        let mut whole_rng = derive_rng(seed, &[stream::WHOLE_SCORE, stream::DVTS, subtree as u64]);
        let whole_score = reward
            .score_whole(prompt, &steps, &mut whole_rng)
            .map_err(|e| EngineError::backend(subtree, e))?;
        telemetry.scoring_calls += 1;
        let mut particle = Particle::from_scored(steps, rewards, max_steps)?;
        particle.set_whole_score(whole_score);
        let answer = answer_of(&particle);
        leaves.push(RolloutRecord {
            particle,
            whole_score,
            answer,
        });
    }

    let winner = leaves
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.whole_score
                .partial_cmp(&b.whole_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .expect("at least one subtree");

    Ok(DvtsOutcome {
        winner,
        leaves,
        telemetry,
    })
}
