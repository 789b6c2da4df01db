//! Noisy-reward step task: a branching tree with one correct path and a
//! scorer that reports step correctness corrupted by Gaussian noise. The
//! ground truth is always computable, so it serves as the desk-scale proxy
//! for an imperfect process reward model.

use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, SyntheticError};
use crate::resample::uniform_f64;
use crate::rng::{derive_rng, derive_seed, stream};
use crate::ssm::{Particle, Prompt, RewardBackend, Step, StepRewardVector, TransitionBackend};

/// Task definition. A trajectory is a path of `depth` branch choices; the
/// scorer rewards steps that keep the trajectory on `correct_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyRewardTask {
    pub branching: usize,
    pub depth: usize,
    pub correct_path: Vec<usize>,
    pub reward_noise_sigma: f64,
    pub seed: u64,
    /// Base reward for a step that leaves the correct path.
    #[serde(default)]
    pub wrong_step_reward: f64,
    /// Hash the prefix into the noise draw instead of consuming the caller's
    /// RNG, making the scorer a deterministic function of the trajectory.
    #[serde(default)]
    pub deterministic_noise: bool,
}

impl NoisyRewardTask {
    pub fn new(
        branching: usize,
        depth: usize,
        correct_path: Vec<usize>,
        reward_noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, SyntheticError> {
        if branching < 2 {
            return Err(SyntheticError::InvalidTask("branching must be at least 2".into()));
        }
        if depth == 0 {
            return Err(SyntheticError::InvalidTask("depth must be at least 1".into()));
        }
        if correct_path.len() != depth {
            return Err(SyntheticError::InvalidTask(format!(
                "correct path has {} entries for depth {depth}",
                correct_path.len()
            )));
        }
        if let Some(&bad) = correct_path.iter().find(|&&b| b >= branching) {
            return Err(SyntheticError::InvalidTask(format!(
                "correct path entry {bad} exceeds branching {branching}"
            )));
        }
        if !reward_noise_sigma.is_finite() || reward_noise_sigma < 0.0 {
            return Err(SyntheticError::InvalidTask("noise sigma must be non-negative".into()));
        }
        Ok(NoisyRewardTask {
            branching,
            depth,
            correct_path,
            reward_noise_sigma,
            seed,
            wrong_step_reward: 0.0,
            deterministic_noise: false,
        })
    }

    /// An instance whose correct path is derived from the seed.
    pub fn random(branching: usize, depth: usize, reward_noise_sigma: f64, seed: u64) -> Self {
        let mut rng = derive_rng(seed, &[stream::TASK]);
        let correct_path = (0..depth)
            .map(|_| (uniform_f64(&mut rng) * branching as f64) as usize % branching)
            .collect();
        NoisyRewardTask::new(branching, depth, correct_path, reward_noise_sigma, seed)
            .expect("derived path is valid")
    }

    /// The gold answer string, the canonical form of the correct path.
    pub fn gold_answer(&self) -> String {
        path_answer(&self.correct_path)
    }

    /// Canonical answer of a finished trajectory, if its steps parse.
    pub fn answer_of(particle: &Particle) -> Option<String> {
        let path: Option<Vec<usize>> = particle
            .steps()
            .iter()
            .map(|s| s.text().parse::<usize>().ok())
            .collect();
        path.map(|p| path_answer(&p))
    }

    /// Whether a finished trajectory is the correct path.
    pub fn is_correct(&self, particle: &Particle) -> bool {
        particle.len() == self.depth
            && particle
                .steps()
                .iter()
                .zip(&self.correct_path)
                .all(|(s, &b)| s.text() == b.to_string())
    }
}

fn path_answer(path: &[usize]) -> String {
    path.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

/// Uniform-branching transition; step text is the branch index.
#[derive(Clone)]
pub struct NoisyTransition {
    task: Arc<NoisyRewardTask>,
}

/// Step scorer: correct-prefix steps score 1, others `wrong_step_reward`,
/// plus clamped Gaussian noise drawn per particle and step.
#[derive(Clone)]
pub struct NoisyReward {
    task: Arc<NoisyRewardTask>,
}

/// Backends for one task instance.
pub fn noisy_task_backends(task: &NoisyRewardTask) -> (NoisyTransition, NoisyReward) {
    let shared = Arc::new(task.clone());
    (
        NoisyTransition { task: Arc::clone(&shared) },
        NoisyReward { task: shared },
    )
}

impl NoisyTransition {
    fn make_step(&self, branch: usize, position: usize) -> Result<Step, BackendError> {
        if position + 1 >= self.task.depth {
            Ok(Step::eos(branch.to_string()))
        } else {
            Step::continuing(branch.to_string()).map_err(|e| BackendError::Protocol(e.to_string()))
        }
    }
}

impl TransitionBackend for NoisyTransition {
    fn init_step(&self, _prompt: &Prompt, rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        let branch = (uniform_f64(rng) * self.task.branching as f64) as usize % self.task.branching;
        self.make_step(branch, 0)
    }

    fn next_step(&self, _prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        let branch = (uniform_f64(rng) * self.task.branching as f64) as usize % self.task.branching;
        self.make_step(branch, steps.len())
    }

    fn generation_temperature(&self) -> f64 {
        1.0
    }

    fn deterministic(&self) -> bool {
        true
    }
}

impl NoisyReward {
    fn step_score(&self, prefix: &[usize], position: usize, rng: &mut dyn RngCore) -> f64 {
        let on_path = prefix[..=position]
            .iter()
            .zip(&self.task.correct_path)
            .all(|(&b, &c)| b == c);
        let base = if on_path { 1.0 } else { self.task.wrong_step_reward };
        if self.task.reward_noise_sigma == 0.0 {
            return base.clamp(0.0, 1.0);
        }
        let normal = Normal::new(0.0, self.task.reward_noise_sigma).expect("sigma validated");
        let noise = if self.task.deterministic_noise {
            let mut tags = vec![stream::SCORE, position as u64];
            tags.extend(prefix[..=position].iter().map(|&b| b as u64));
            let mut prefix_rng = derive_rng(derive_seed(self.task.seed, &tags), &[]);
            normal.sample(&mut prefix_rng)
        } else {
            normal.sample(rng)
        };
        (base + noise).clamp(0.0, 1.0)
    }

    fn parse_prefix(&self, steps: &[Step]) -> Result<Vec<usize>, BackendError> {
        steps
            .iter()
            .map(|s| {
                s.text()
                    .parse::<usize>()
                    .map_err(|_| BackendError::Protocol(format!("step text '{}' is not a branch", s.text())))
            })
            .collect()
    }
}

impl RewardBackend for NoisyReward {
    fn score_steps(
        &self,
        _prompt: &Prompt,
        steps: &[Step],
        rng: &mut dyn RngCore,
    ) -> Result<StepRewardVector, BackendError> {
        if steps.len() > self.task.depth {
            return Err(BackendError::Protocol(format!(
                "{} steps exceed depth {}",
                steps.len(),
                self.task.depth
            )));
        }
        let prefix = self.parse_prefix(steps)?;
        let values = (0..steps.len())
            .map(|t| self.step_score(&prefix, t, rng))
            .collect();
        StepRewardVector::new(values).map_err(|e| BackendError::InvalidScore(e.to_string()))
    }

    fn score_whole(&self, prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<f64, BackendError> {
        let scores = self.score_steps(prompt, steps, rng)?;
        if scores.is_empty() {
            return Err(BackendError::Protocol("cannot score an empty trajectory".into()));
        }
        Ok(scores.values().iter().sum::<f64>() / scores.len() as f64)
    }
}
