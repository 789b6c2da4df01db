//! Discrete hidden Markov model with an exact filtering oracle.
//!
//! The HMM instantiates the step-wise state-space model with everything
//! computable: the transition backend samples hidden states as step texts and
//! the reward backend returns emission likelihoods of a fixed observation
//! sequence. Exact forward filtering gives the ground truth that particle
//! estimates are checked against.
//!
//! Reward space matters. With [`HmmRewardSpace::LogLikelihood`] each step
//! reward is `ln p(o_t | x_t)`; running the engine with `last` aggregation and
//! softmax temperature 1 then resamples with probability proportional to the
//! newest emission likelihood, which is exactly the textbook bootstrap
//! filter. With [`HmmRewardSpace::Likelihood`] rewards are raw likelihoods,
//! and `prod` aggregation yields path-likelihood weights.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, SyntheticError};
use crate::resample::uniform_f64;
use crate::ssm::{Particle, Prompt, RewardBackend, Step, StepRewardVector, TransitionBackend};
use crate::trace::FilterOutcome;

/// Floor for log-space rewards so zero-probability emissions stay finite.
const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// A discrete HMM with a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteHmm {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    emission: Vec<Vec<f64>>,
    horizon: usize,
}

fn check_stochastic(matrix: &'static str, rows: &[Vec<f64>], width: usize) -> Result<(), SyntheticError> {
    for (row_index, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(SyntheticError::InvalidTask(format!(
                "{matrix} row {row_index} has {} entries, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
            return Err(SyntheticError::InvalidTask(format!(
                "{matrix} row {row_index} has entries outside [0, 1]"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(SyntheticError::NotRowStochastic {
                matrix,
                row: row_index,
                sum,
            });
        }
    }
    Ok(())
}

impl DiscreteHmm {
    pub fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
        horizon: usize,
    ) -> Result<Self, SyntheticError> {
        let n_states = initial.len();
        if n_states == 0 {
            return Err(SyntheticError::InvalidTask("at least one state required".into()));
        }
        if horizon == 0 {
            return Err(SyntheticError::InvalidTask("horizon must be at least 1".into()));
        }
        let n_symbols = emission.first().map(Vec::len).unwrap_or(0);
        if n_symbols == 0 {
            return Err(SyntheticError::InvalidTask("at least one symbol required".into()));
        }
        check_stochastic("initial", std::slice::from_ref(&initial), n_states)?;
        if transition.len() != n_states || emission.len() != n_states {
            return Err(SyntheticError::InvalidTask(
                "transition and emission matrices need one row per state".into(),
            ));
        }
        check_stochastic("transition", &transition, n_states)?;
        check_stochastic("emission", &emission, n_symbols)?;
        Ok(DiscreteHmm {
            initial,
            transition,
            emission,
            horizon,
        })
    }

    /// A random instance with strictly positive rows, normalized exactly.
    pub fn random(n_states: usize, n_symbols: usize, horizon: usize, rng: &mut dyn RngCore) -> Self {
        let mut row = |width: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..width).map(|_| 0.05 + uniform_f64(rng)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        };
        let initial = row(n_states);
        let transition = (0..n_states).map(|_| row(n_states)).collect();
        let emission = (0..n_states).map(|_| row(n_symbols)).collect();
        DiscreteHmm::new(initial, transition, emission, horizon).expect("normalized rows")
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.emission[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn emission(&self) -> &[Vec<f64>] {
        &self.emission
    }

    pub fn emission_probability(&self, state: usize, symbol: usize) -> f64 {
        self.emission[state][symbol]
    }

    /// Sample a state/observation sequence of length `horizon`.
    pub fn sample_sequence(&self, rng: &mut dyn RngCore) -> (Vec<usize>, Vec<usize>) {
        let mut states: Vec<usize> = Vec::with_capacity(self.horizon);
        let mut observations: Vec<usize> = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            let state = if t == 0 {
                sample_categorical(self.initial.as_slice(), rng)
            } else {
                sample_categorical(self.transition[states[t - 1]].as_slice(), rng)
            };
            states.push(state);
            observations.push(sample_categorical(self.emission[state].as_slice(), rng));
        }
        (states, observations)
    }

    fn check_observations(&self, observations: &[usize]) -> Result<(), SyntheticError> {
        if observations.len() != self.horizon {
            return Err(SyntheticError::InvalidObservations(format!(
                "{} observations for horizon {}",
                observations.len(),
                self.horizon
            )));
        }
        if let Some(&bad) = observations.iter().find(|&&o| o >= self.n_symbols()) {
            return Err(SyntheticError::InvalidObservations(format!(
                "symbol {bad} out of range (alphabet size {})",
                self.n_symbols()
            )));
        }
        Ok(())
    }
}

fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u = uniform_f64(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Exact filtering marginals `p(x_t | o_{1:t})` by the forward algorithm,
/// one normalized row per time step.
pub fn hmm_exact_filtering(
    hmm: &DiscreteHmm,
    observations: &[usize],
) -> Result<Vec<Vec<f64>>, SyntheticError> {
    hmm.check_observations(observations)?;
    let n = hmm.n_states();
    let mut marginals = Vec::with_capacity(hmm.horizon);
    let mut alpha = vec![0.0; n];
    for (t, &obs) in observations.iter().enumerate() {
        let mut next = vec![0.0; n];
        if t == 0 {
            for (s, value) in next.iter_mut().enumerate() {
                *value = hmm.initial[s] * hmm.emission[s][obs];
            }
        } else {
            for (s, value) in next.iter_mut().enumerate() {
                let mut mass = 0.0;
                for (prev, &a) in alpha.iter().enumerate() {
                    mass += a * hmm.transition[prev][s];
                }
                *value = mass * hmm.emission[s][obs];
            }
        }
        let norm: f64 = next.iter().sum();
        if norm <= 0.0 {
            return Err(SyntheticError::ImpossibleObservation { time: t });
        }
        for v in &mut next {
            *v /= norm;
        }
        marginals.push(next.clone());
        alpha = next;
    }
    Ok(marginals)
}

/// Scale of the rewards the HMM backend emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HmmRewardSpace {
    /// `ln p(o_t | x_t)` per step. With `last` aggregation and softmax
    /// temperature 1, the engine is the textbook bootstrap filter.
    LogLikelihood,
    /// Raw `p(o_t | x_t)` per step.
    Likelihood,
}

/// Transition backend sampling hidden states; step text is the state index.
#[derive(Clone)]
pub struct HmmTransition {
    hmm: Arc<DiscreteHmm>,
}

/// Reward backend returning emission likelihoods of the fixed observations.
#[derive(Clone)]
pub struct HmmReward {
    hmm: Arc<DiscreteHmm>,
    observations: Vec<usize>,
    space: HmmRewardSpace,
}

/// Backends that drive the engine over an HMM instance.
pub fn hmm_as_backends(
    hmm: &DiscreteHmm,
    observations: &[usize],
    space: HmmRewardSpace,
) -> Result<(HmmTransition, HmmReward), SyntheticError> {
    hmm.check_observations(observations)?;
    let shared = Arc::new(hmm.clone());
    Ok((
        HmmTransition { hmm: Arc::clone(&shared) },
        HmmReward {
            hmm: shared,
            observations: observations.to_vec(),
            space,
        },
    ))
}

fn parse_state(step: &Step) -> Result<usize, BackendError> {
    step.text()
        .parse::<usize>()
        .map_err(|_| BackendError::Protocol(format!("step text '{}' is not a state index", step.text())))
}

impl HmmTransition {
    fn make_step(&self, state: usize, position: usize) -> Result<Step, BackendError> {
        if position + 1 >= self.hmm.horizon {
            Ok(Step::eos(state.to_string()))
        } else {
            Step::continuing(state.to_string()).map_err(|e| BackendError::Protocol(e.to_string()))
        }
    }
}

impl TransitionBackend for HmmTransition {
    fn init_step(&self, _prompt: &Prompt, rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        let state = sample_categorical(&self.hmm.initial, rng);
        self.make_step(state, 0)
    }

    fn next_step(&self, _prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        let previous = parse_state(steps.last().ok_or_else(|| {
            BackendError::Protocol("next_step called with no prior steps".into())
        })?)?;
        if previous >= self.hmm.n_states() {
            return Err(BackendError::Protocol(format!("state {previous} out of range")));
        }
        let state = sample_categorical(&self.hmm.transition[previous], rng);
        self.make_step(state, steps.len())
    }

    fn generation_temperature(&self) -> f64 {
        1.0
    }

    fn deterministic(&self) -> bool {
        true
    }
}

impl RewardBackend for HmmReward {
    fn score_steps(
        &self,
        _prompt: &Prompt,
        steps: &[Step],
        _rng: &mut dyn RngCore,
    ) -> Result<StepRewardVector, BackendError> {
        if steps.len() > self.observations.len() {
            return Err(BackendError::Protocol(format!(
                "{} steps exceed horizon {}",
                steps.len(),
                self.observations.len()
            )));
        }
        let mut values = Vec::with_capacity(steps.len());
        for (t, step) in steps.iter().enumerate() {
            let state = parse_state(step)?;
            if state >= self.hmm.n_states() {
                return Err(BackendError::Protocol(format!("state {state} out of range")));
            }
            let likelihood = self.hmm.emission[state][self.observations[t]];
            values.push(match self.space {
                HmmRewardSpace::LogLikelihood => likelihood.max(LIKELIHOOD_FLOOR).ln(),
                HmmRewardSpace::Likelihood => likelihood,
            });
        }
        StepRewardVector::new(values).map_err(|e| BackendError::InvalidScore(e.to_string()))
    }

    fn score_whole(&self, prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<f64, BackendError> {
        let scores = self.score_steps(prompt, steps, rng)?;
        Ok(match self.space {
            HmmRewardSpace::LogLikelihood => scores.values().iter().sum(),
            HmmRewardSpace::Likelihood => scores.values().iter().product(),
        })
    }
}

/// Per-time filtering estimates from a particle-filter run: at each round the
/// resampling probabilities weight the particles' newest states, and the
/// final round uses the finished set's weights.
pub fn pf_filtering_estimates(outcome: &FilterOutcome, n_states: usize) -> Vec<Vec<f64>> {
    let state_of = |particle: &Particle, t: usize| -> usize {
        particle.steps()[t]
            .text()
            .parse::<usize>()
            .expect("state-index step text")
    };
    let mut estimates = Vec::new();
    for round in &outcome.rounds {
        let t = round.round - 1;
        let mut est = vec![0.0; n_states];
        for (particle, &p) in round.pre_resample.iter().zip(&round.probs) {
            est[state_of(particle, t)] += p;
        }
        estimates.push(est);
    }
    // Final time step: every trajectory is complete.
    if let Some(first) = outcome.particles.first() {
        let t = first.len() - 1;
        let mut est = vec![0.0; n_states];
        for (particle, &p) in outcome.particles.iter().zip(&outcome.final_trace.probs) {
            est[state_of(particle, t)] += p;
        }
        estimates.push(est);
    }
    estimates
}

/// Mean total-variation distance between estimated and exact marginal rows.
pub fn mean_tv_distance(estimates: &[Vec<f64>], exact: &[Vec<f64>]) -> f64 {
    assert_eq!(estimates.len(), exact.len(), "row count mismatch");
    let mut total = 0.0;
    for (est, reference) in estimates.iter().zip(exact) {
        let tv: f64 = est
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        total += tv;
    }
    total / estimates.len() as f64
}
