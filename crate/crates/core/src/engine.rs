//! The inference loop: particle filtering, particle Gibbs, and particle Gibbs
//! with parallel tempering, plus final-answer selection.
//!
//! One filtering pass works in synchronized rounds. All active particles grow
//! by exactly one scored step, weights are recomputed from each full partial
//! trajectory, a softmax over the (optionally transformed) weights gives the
//! resampling distribution, and the population is redrawn with replacement.
//! Resampling happens every round, with no effective-sample-size gating. The
//! loop ends when every particle has finished.
//!
//! With a reference particle (the particle Gibbs inner loop), the last slot
//! always holds the reference: its steps are revealed round by round from the
//! recorded trajectory instead of being generated, resampling draws only the
//! other `N-1` slots from the softmax over all `N` weights, and forks may copy
//! the reference's prefix and then diverge.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_values, weights_for, AggregationMode};
use crate::error::{BackendError, EngineError};
use crate::resample::{multinomial_resample, sample_index, softmax_distribution, uniform_f64};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::ssm::{Particle, Prompt, RewardBackend, Step, TransitionBackend};
use crate::trace::{
    EngineTelemetry, FilterOutcome, FinalTrace, GibbsOutcome, ReferenceChoice, RoundTrace, SwapDecision,
    TemperingOutcome,
};

/// Round tag for the post-loop weight computation.
const FINAL_ROUND_TAG: u64 = u64::MAX;

/// Transform applied to aggregated weights before the softmax.
///
/// `Raw` feeds the scores in unchanged. `Logit` maps probability-scale scores
/// through `ln(p / (1 - p))`; reward models that emit scores in `[0, 1]`
/// otherwise produce near-uniform resampling distributions. Off by default
/// and never applied silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTransform {
    Raw,
    Logit,
}

const LOGIT_EPS: f64 = 1e-9;

/// Apply a [`WeightTransform`] to a weight vector.
pub fn apply_transform(weights: &[f64], transform: WeightTransform) -> Vec<f64> {
    match transform {
        WeightTransform::Raw => weights.to_vec(),
        WeightTransform::Logit => weights
            .iter()
            .map(|&w| {
                let p = w.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (p / (1.0 - p)).ln()
            })
            .collect(),
    }
}

/// Configuration for one particle-filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PFConfig {
    pub n_particles: usize,
    /// Trajectory length cap; generation never caps length on its own.
    pub max_steps: usize,
    pub aggregation: AggregationMode,
    pub softmax_temperature: f64,
    pub generation_temperature: f64,
    pub seed: u64,
    pub weight_transform: WeightTransform,
    /// Upper bound on concurrent backend calls within a round.
    pub in_flight_limit: usize,
}

impl Default for PFConfig {
    fn default() -> Self {
        PFConfig {
            n_particles: 4,
            max_steps: 40,
            aggregation: AggregationMode::Last,
            softmax_temperature: 1.0,
            generation_temperature: 0.8,
            seed: 0,
            weight_transform: WeightTransform::Raw,
            in_flight_limit: 1,
        }
    }
}

impl PFConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_particles == 0 {
            return Err(EngineError::InvalidConfig("n_particles must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(EngineError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !self.softmax_temperature.is_finite() || self.softmax_temperature <= 0.0 {
            return Err(EngineError::NonPositiveTemperature(self.softmax_temperature));
        }
        if !self.generation_temperature.is_finite() || self.generation_temperature < 0.0 {
            return Err(EngineError::InvalidConfig(format!(
                "generation temperature must be finite and non-negative, got {}",
                self.generation_temperature
            )));
        }
        if self.in_flight_limit == 0 {
            return Err(EngineError::InvalidConfig("in_flight_limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a fixed compute budget `N x T x M` is split between particles, Gibbs
/// iterations, and parallel chains. Chain temperatures are ordered hottest
/// first and must be strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub n_particles: usize,
    pub gibbs_iterations: usize,
    pub parallel_chains: usize,
    pub chain_temperatures: Vec<f64>,
}

impl BudgetAllocation {
    pub fn new(
        n_particles: usize,
        gibbs_iterations: usize,
        chain_temperatures: Vec<f64>,
    ) -> Result<Self, EngineError> {
        let alloc = BudgetAllocation {
            n_particles,
            gibbs_iterations,
            parallel_chains: chain_temperatures.len(),
            chain_temperatures,
        };
        alloc.validate()?;
        Ok(alloc)
    }

    /// A geometric temperature ladder `base * 2^(M-1), ..., 2*base, base`,
    /// so the coldest chain runs at `base`.
    pub fn with_default_ladder(
        n_particles: usize,
        gibbs_iterations: usize,
        parallel_chains: usize,
        base_temperature: f64,
    ) -> Result<Self, EngineError> {
        if parallel_chains == 0 {
            return Err(EngineError::InvalidConfig("parallel_chains must be at least 1".into()));
        }
        let temps = (0..parallel_chains)
            .map(|k| base_temperature * f64::powi(2.0, (parallel_chains - 1 - k) as i32))
            .collect();
        BudgetAllocation::new(n_particles, gibbs_iterations, temps)
    }

    /// Total budget in complete-generation equivalents.
    pub fn total_budget(&self) -> usize {
        self.n_particles * self.gibbs_iterations * self.parallel_chains
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_particles == 0 || self.gibbs_iterations == 0 || self.parallel_chains == 0 {
            return Err(EngineError::InvalidConfig(
                "budget allocation requires n_particles, gibbs_iterations, and parallel_chains >= 1".into(),
            ));
        }
        if self.chain_temperatures.len() != self.parallel_chains {
            return Err(EngineError::InvalidConfig(format!(
                "{} chain temperatures for {} chains",
                self.chain_temperatures.len(),
                self.parallel_chains
            )));
        }
        for &temperature in &self.chain_temperatures {
            if !temperature.is_finite() || temperature <= 0.0 {
                return Err(EngineError::InvalidConfig(
                    "chain temperatures must be positive and finite".into(),
                ));
            }
        }
        for window in self.chain_temperatures.windows(2) {
            if window[0] <= window[1] {
                return Err(EngineError::InvalidConfig(
                    "chain temperatures must be strictly decreasing".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Run jobs `0..count` with at most `limit` worker threads, returning results
/// in index order regardless of completion order.
fn for_each_indexed<R, F>(count: usize, limit: usize, job: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    if limit <= 1 || count <= 1 {
        return (0..count).map(job).collect();
    }
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let slots: Vec<Mutex<Option<R>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..limit.min(count) {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                if index >= count {
                    break;
                }
                let result = job(index);
                *slots[index].lock().expect("result slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("result slot").expect("job ran"))
        .collect()
}

/// Generate one step for a trajectory and score it, returning the step and
/// the reward of the new step. The reward backend sees the full prefix, so
/// step scores stay conditioned on everything generated so far.
fn generate_and_score(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    existing: Option<&[Step]>,
    seed: u64,
    round: u64,
    index: usize,
) -> Result<(Step, f64), BackendError> {
    let mut gen_rng = derive_rng(seed, &[stream::PROPAGATE, round, index as u64]);
    let step = match existing {
        None => transition.init_step(prompt, &mut gen_rng)?,
        Some(steps) => transition.next_step(prompt, steps, &mut gen_rng)?,
    };
    let mut scored: Vec<Step> = existing.map(<[Step]>::to_vec).unwrap_or_default();
    scored.push(step.clone());
    let mut score_rng = derive_rng(seed, &[stream::SCORE, round, index as u64]);
    let vector = reward.score_steps(prompt, &scored, &mut score_rng)?;
    if vector.len() != scored.len() {
        return Err(BackendError::Protocol(format!(
            "scored {} steps but received {} values",
            scored.len(),
            vector.len()
        )));
    }
    let new_reward = vector.last().expect("non-empty score vector");
    Ok((step, new_reward))
}

/// Particle filtering over a step-wise generator.
///
/// Returns `N` finished particles along with per-round traces. When
/// `reference` is given it must be a finished particle; it occupies the last
/// slot after every resampling round and is never evicted, though forks of
/// its prefix compete in the other slots.
pub fn particle_filter(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    cfg: &PFConfig,
    reference: Option<&Particle>,
) -> Result<FilterOutcome, EngineError> {
    cfg.validate()?;
    if let Some(re) = reference {
        if !re.is_finished() {
            return Err(EngineError::UnfinishedReference);
        }
        if re.is_empty() {
            return Err(EngineError::EmptyParticleSet);
        }
    }

    let n = cfg.n_particles;
    let fresh = if reference.is_some() { n - 1 } else { n };
    let mut telemetry = EngineTelemetry::default();

    // Initialization: every non-reference slot draws its first step.
    let results = for_each_indexed(fresh, cfg.in_flight_limit, |i| {
        generate_and_score(prompt, transition, reward, None, cfg.seed, 0, i)
    });
    telemetry.generation_calls += fresh as u64;
    telemetry.scoring_calls += fresh as u64;
    let mut particles = Vec::with_capacity(n);
    for (i, result) in results.into_iter().enumerate() {
        let (step, reward_value) = result.map_err(|e| EngineError::backend(i, e))?;
        particles.push(Particle::first(step, reward_value, cfg.max_steps)?);
    }
    if let Some(re) = reference {
        // The reference slot starts from the recorded first step; rewards
        // ride along from when the trajectory was originally scored.
        particles.push(Particle::first(
            re.steps()[0].clone(),
            re.step_rewards()[0],
            cfg.max_steps,
        )?);
    }

    let mut rounds: Vec<RoundTrace> = Vec::new();
    let mut round: usize = 1;
    while particles.iter().any(Particle::is_active) {
        // Weights over the full partial trajectories.
        let weights = weights_for(
            prompt,
            &mut particles,
            cfg.aggregation,
            Some(reward),
            derive_seed(cfg.seed, &[stream::WHOLE_SCORE, round as u64]),
        )?;
        if cfg.aggregation == AggregationMode::Model {
            telemetry.scoring_calls += particles.iter().filter(|p| p.is_active()).count() as u64;
        }
        let transformed = apply_transform(&weights, cfg.weight_transform);
        let dist = softmax_distribution(&transformed, cfg.softmax_temperature)?;

        let draw_count = if reference.is_some() { n - 1 } else { n };
        let mut sampled = if draw_count > 0 {
            let mut rng = derive_rng(cfg.seed, &[stream::RESAMPLE, round as u64]);
            multinomial_resample(&dist, draw_count, &mut rng)?
        } else {
            Vec::new()
        };
        if reference.is_some() {
            // Slot N-1 keeps the reference.
            sampled.push(n - 1);
        }

        rounds.push(RoundTrace {
            round,
            weights,
            probs: dist.probs().to_vec(),
            sampled_indices: sampled.clone(),
            pre_resample: particles.clone(),
        });

        let resampled: Vec<Particle> = sampled.iter().map(|&j| particles[j].fork(round, j)).collect();
        particles = resampled;

        // Transition: actives grow one step; finished particles wait. The
        // reference slot reveals its next recorded step instead of generating.
        let ref_slot = if reference.is_some() { Some(n - 1) } else { None };
        let targets: Vec<usize> = particles
            .iter()
            .enumerate()
            .filter(|(i, p)| p.is_active() && Some(*i) != ref_slot)
            .map(|(i, _)| i)
            .collect();
        let step_results = for_each_indexed(targets.len(), cfg.in_flight_limit, |k| {
            let i = targets[k];
            generate_and_score(
                prompt,
                transition,
                reward,
                Some(particles[i].steps()),
                cfg.seed,
                round as u64,
                i,
            )
        });
        telemetry.generation_calls += targets.len() as u64;
        telemetry.scoring_calls += targets.len() as u64;
        let mut grown: Vec<(usize, Step, f64)> = Vec::with_capacity(targets.len());
        for (k, result) in step_results.into_iter().enumerate() {
            let index = targets[k];
            let (step, reward_value) = result.map_err(|e| EngineError::backend(index, e))?;
            grown.push((index, step, reward_value));
        }
        for (index, step, reward_value) in grown {
            particles[index] = particles[index].extend(step, reward_value)?;
        }
        if let (Some(slot), Some(re)) = (ref_slot, reference) {
            if particles[slot].is_active() {
                let at = particles[slot].len();
                particles[slot] = particles[slot].extend(re.steps()[at].clone(), re.step_rewards()[at])?;
            }
        }
        round += 1;
    }

    // Weights of the finished set, for selection and reference sampling.
    let weights = weights_for(
        prompt,
        &mut particles,
        cfg.aggregation,
        Some(reward),
        derive_seed(cfg.seed, &[stream::WHOLE_SCORE, FINAL_ROUND_TAG]),
    )?;
    let transformed = apply_transform(&weights, cfg.weight_transform);
    let dist = softmax_distribution(&transformed, cfg.softmax_temperature)?;
    let final_trace = FinalTrace {
        weights,
        probs: dist.probs().to_vec(),
    };

    Ok(FilterOutcome {
        particles,
        rounds,
        final_trace,
        telemetry,
    })
}

/// Multi-iteration and multi-chain driver shared by [`particle_gibbs`] and
/// [`parallel_tempering`]. Chain `k` resamples and selects references at
/// `temperatures[k]`; after every iteration, neighboring chains exchange
/// references with the replica-exchange acceptance probability.
fn tempered_chains(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    cfg: &PFConfig,
    n_particles: usize,
    iterations: usize,
    temperatures: &[f64],
) -> Result<TemperingOutcome, EngineError> {
    if iterations == 0 {
        return Err(EngineError::InvalidConfig("iterations must be at least 1".into()));
    }
    let chain_count = temperatures.len();
    let mut chains: Vec<GibbsOutcome> = (0..chain_count)
        .map(|_| GibbsOutcome {
            iterations: Vec::new(),
            references: Vec::new(),
        })
        .collect();
    let mut references: Vec<Option<(Particle, f64)>> = vec![None; chain_count];
    let mut swap_decisions = Vec::new();

    for iteration in 0..iterations {
        for chain in 0..chain_count {
            // The first chain's first iteration runs under the caller's seed
            // unchanged, so a single-iteration single-chain run is exactly a
            // plain particle-filter pass.
            let seed = if iteration == 0 && chain == 0 {
                cfg.seed
            } else {
                derive_seed(cfg.seed, &[stream::CHAIN_ITER, iteration as u64, chain as u64])
            };
            let chain_cfg = PFConfig {
                n_particles,
                softmax_temperature: temperatures[chain],
                seed,
                ..cfg.clone()
            };
            let reference = references[chain].as_ref().map(|(p, _)| p.clone());
            let outcome = particle_filter(prompt, transition, reward, &chain_cfg, reference.as_ref())?;

            // Sample the reference that seeds the next iteration of this chain.
            let dist = softmax_distribution(
                &apply_transform(&outcome.final_trace.weights, cfg.weight_transform),
                temperatures[chain],
            )?;
            let mut ref_rng = derive_rng(cfg.seed, &[stream::REFERENCE, iteration as u64, chain as u64]);
            let ref_index = sample_index(&dist, &mut ref_rng)?;
            let ref_particle = outcome.particles[ref_index].clone();
            let ref_weight = apply_transform(&outcome.final_trace.weights, cfg.weight_transform)[ref_index];
            chains[chain].references.push(ReferenceChoice {
                iteration: iteration + 1,
                index: ref_index,
            });
            references[chain] = Some((ref_particle, ref_weight));
            chains[chain].iterations.push(outcome);
        }

        // Replica exchange between every pair of neighboring chains.
        for pair in 0..chain_count.saturating_sub(1) {
            let w_hot = references[pair].as_ref().expect("reference set").1;
            let w_cold = references[pair + 1].as_ref().expect("reference set").1;
            let acceptance = swap_probability(w_hot, w_cold, temperatures[pair], temperatures[pair + 1]);
            let mut rng = derive_rng(cfg.seed, &[stream::SWAP, iteration as u64, pair as u64]);
            let swapped = accept_swap(acceptance, &mut rng);
            if swapped {
                references.swap(pair, pair + 1);
            }
            swap_decisions.push(SwapDecision {
                iteration: iteration + 1,
                lower_chain: pair,
                acceptance,
                swapped,
            });
        }
    }

    Ok(TemperingOutcome {
        chains,
        swap_decisions,
    })
}

/// Particle Gibbs: iteration 1 is a plain particle-filter pass; every later
/// iteration samples a reference from the previous final weights and runs the
/// reference-preserving filter. Returns the full iteration history; the final
/// iteration's set is the answer set.
pub fn particle_gibbs(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    cfg: &PFConfig,
    iterations: usize,
) -> Result<GibbsOutcome, EngineError> {
    cfg.validate()?;
    let outcome = tempered_chains(
        prompt,
        transition,
        reward,
        cfg,
        cfg.n_particles,
        iterations,
        &[cfg.softmax_temperature],
    )?;
    Ok(outcome.chains.into_iter().next().expect("one chain"))
}

/// Particle Gibbs with parallel tempering: `M` chains at strictly decreasing
/// softmax temperatures, exchanging reference particles after each iteration.
pub fn parallel_tempering(
    prompt: &Prompt,
    transition: &dyn TransitionBackend,
    reward: &dyn RewardBackend,
    cfg: &PFConfig,
    alloc: &BudgetAllocation,
) -> Result<TemperingOutcome, EngineError> {
    cfg.validate()?;
    alloc.validate()?;
    tempered_chains(
        prompt,
        transition,
        reward,
        cfg,
        alloc.n_particles,
        alloc.gibbs_iterations,
        &alloc.chain_temperatures,
    )
}

/// Replica-exchange acceptance probability for neighboring chains at
/// temperatures `t_hot > t_cold` whose reference weights are `w_hot` and
/// `w_cold`. With tempered targets proportional to `exp(w / T)`, the ratio
/// reduces to `min(1, exp((w_cold - w_hot) * (1/t_hot - 1/t_cold)))`.
pub fn swap_probability(w_hot: f64, w_cold: f64, t_hot: f64, t_cold: f64) -> f64 {
    debug_assert!(t_hot > 0.0 && t_cold > 0.0, "temperatures must be positive");
    let exponent = (w_cold - w_hot) * (1.0 / t_hot - 1.0 / t_cold);
    exponent.exp().min(1.0)
}

/// Bernoulli swap decision. Factored out so empirical acceptance rates can be
/// measured over the exact code path the engine uses.
pub fn accept_swap(probability: f64, rng: &mut dyn RngCore) -> bool {
    uniform_f64(rng) < probability
}

/// The chosen particle and its aggregated weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub weight: f64,
}

/// Pick the particle with the maximal aggregated weight; ties break to the
/// lowest index. All particles must be finished.
pub fn select_answer(
    prompt: &Prompt,
    particles: &[Particle],
    mode: AggregationMode,
    backend: Option<&dyn RewardBackend>,
    selection_seed: u64,
) -> Result<Selection, EngineError> {
    if particles.is_empty() {
        return Err(EngineError::EmptyParticleSet);
    }
    if let Some(active) = particles.iter().position(Particle::is_active) {
        return Err(EngineError::InvalidConfig(format!(
            "particle {active} is still active"
        )));
    }
    let mut best: Option<Selection> = None;
    for (index, particle) in particles.iter().enumerate() {
        let weight = match mode {
            AggregationMode::Model => match particle.whole_score_cache() {
                Some(cached) => cached,
                None => {
                    let backend = backend.ok_or(EngineError::MissingWholeScore)?;
                    let mut rng = derive_rng(selection_seed, &[stream::SELECT, index as u64]);
                    backend
                        .score_whole(prompt, particle.steps(), &mut rng)
                        .map_err(|e| EngineError::backend(index, e))?
                }
            },
            _ => aggregate_values(particle.step_rewards(), mode, None)?,
        };
        if !weight.is_finite() {
            return Err(EngineError::NonFiniteWeight { index, value: weight });
        }
        if best.is_none_or(|b| weight > b.weight) {
            best = Some(Selection { index, weight });
        }
    }
    Ok(best.expect("non-empty particle set"))
}
