//! State-space abstraction for step-wise generation.
//!
//! A generator produces a trajectory one step at a time; a scorer attaches a
//! reward to each step. Trajectories plus their reward history are tracked as
//! [`Particle`] values. Backends implement [`TransitionBackend`] (propose the
//! next step) and [`RewardBackend`] (score steps), whether they are live HTTP
//! services or in-process synthetic tasks.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BackendError, EngineError};

/// Delimiter that separates generation steps. The trailing delimiter is cut
/// from a step's stored text and re-prefixed on the next request, so stored
/// step text never contains it at the boundary.
pub const STEP_DELIMITER: &str = "## Step";

/// System prompt used when a [`Prompt`] does not supply its own. It forces a
/// step-by-step layout and a final boxed answer so steps can be delimited and
/// answers extracted mechanically.
pub const DEFAULT_SYSTEM_PROMPT: &str = "\
Solve the following math problem efficiently and clearly:
    - For simple problems (2 steps or fewer):
    Provide a concise solution with minimal explanation.

    - For complex problems (3 steps or more):
    Use this step-by-step format:

    ## Step 1: [Concise description]
    [Brief explanation and calculations]

    ## Step 2: [Concise description]
    [Brief explanation and calculations]

Regardless of the approach, always conclude with:

Therefore, the final answer is: $\\boxed{answer}$. I hope it is correct.

Where [answer] is just the final number or expression that solves the problem.";

/// A question posed to the generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    question_id: String,
    system_text: String,
    question_text: String,
}

impl Prompt {
    /// Build a prompt with the default system text.
    pub fn new(question_id: impl Into<String>, question_text: impl Into<String>) -> Result<Self, EngineError> {
        let question_text = question_text.into();
        if question_text.is_empty() {
            return Err(EngineError::InvalidConfig("question text must be non-empty".into()));
        }
        Ok(Prompt {
            question_id: question_id.into(),
            system_text: DEFAULT_SYSTEM_PROMPT.to_string(),
            question_text,
        })
    }

    /// Replace the system text.
    pub fn with_system(mut self, system_text: impl Into<String>) -> Self {
        self.system_text = system_text.into();
        self
    }

    pub fn question_id(&self) -> &str {
        &self.question_id
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn question_text(&self) -> &str {
        &self.question_text
    }
}

/// Why a generated step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// The step stopped at the step delimiter; the trajectory continues.
    Continuing,
    /// The generator emitted its end-of-sequence marker.
    Eos,
    /// The per-step token cap interrupted generation.
    MaxTokens,
}

/// One generation step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    text: String,
    finish: FinishReason,
}

impl Step {
    /// A step may have empty text only when it terminates the trajectory.
    pub fn new(text: impl Into<String>, finish: FinishReason) -> Result<Self, EngineError> {
        let text = text.into();
        if text.is_empty() && finish == FinishReason::Continuing {
            return Err(EngineError::EmptyStepText);
        }
        Ok(Step { text, finish })
    }

    pub fn continuing(text: impl Into<String>) -> Result<Self, EngineError> {
        Step::new(text, FinishReason::Continuing)
    }

    pub fn eos(text: impl Into<String>) -> Self {
        Step {
            text: text.into(),
            finish: FinishReason::Eos,
        }
    }

    pub fn max_tokens(text: impl Into<String>) -> Self {
        Step {
            text: text.into(),
            finish: FinishReason::MaxTokens,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn finish(&self) -> FinishReason {
        self.finish
    }

    /// True when this step ends its trajectory.
    pub fn is_terminal(&self) -> bool {
        self.finish != FinishReason::Continuing
    }
}

/// Per-step scalar rewards for one trajectory. Values must be finite; live
/// reward models additionally keep them in `[0, 1]`, which the gateway
/// enforces at its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRewardVector(Vec<f64>);

impl StepRewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EngineError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(EngineError::NonFiniteWeight { index, value });
            }
        }
        Ok(StepRewardVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn last(&self) -> Option<f64> {
        self.0.last().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Whether a particle is still growing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleStatus {
    Active,
    Finished,
}

/// One resampling-round survival event: at `round`, this particle was forked
/// from the particle at `parent` in the pre-resampling set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub round: usize,
    pub parent: usize,
}

/// A partial or finished trajectory with its reward history.
///
/// Invariants maintained by construction:
/// - `step_rewards.len() == steps.len()` at all times;
/// - the particle is finished exactly when its latest step is terminal or the
///   step cap is reached, and a finished particle never gains steps;
/// - `lineage.len()` equals the number of resampling rounds survived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    steps: Vec<Step>,
    step_rewards: Vec<f64>,
    status: ParticleStatus,
    lineage: Vec<LineageEntry>,
    max_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    whole_score: Option<f64>,
}

fn status_for(steps: &[Step], max_steps: usize) -> ParticleStatus {
    match steps.last() {
        Some(last) if last.is_terminal() || steps.len() >= max_steps => ParticleStatus::Finished,
        Some(_) => ParticleStatus::Active,
        None => ParticleStatus::Active,
    }
}

impl Particle {
    /// Start a trajectory from its first step.
    pub fn first(step: Step, reward: f64, max_steps: usize) -> Result<Self, EngineError> {
        if max_steps == 0 {
            return Err(EngineError::InvalidConfig("max_steps must be at least 1".into()));
        }
        if !reward.is_finite() {
            return Err(EngineError::NonFiniteWeight { index: 0, value: reward });
        }
        let steps = vec![step];
        let status = status_for(&steps, max_steps);
        Ok(Particle {
            steps,
            step_rewards: vec![reward],
            status,
            lineage: Vec::new(),
            max_steps,
            whole_score: None,
        })
    }

    /// Assemble a particle from an already-scored trajectory. Used by the
    /// baselines, which score a complete rollout in one call.
    pub fn from_scored(steps: Vec<Step>, rewards: Vec<f64>, max_steps: usize) -> Result<Self, EngineError> {
        if steps.is_empty() {
            return Err(EngineError::EmptyRewards);
        }
        if steps.len() != rewards.len() {
            return Err(EngineError::InvalidConfig(format!(
                "{} steps but {} rewards",
                steps.len(),
                rewards.len()
            )));
        }
        for (index, &value) in rewards.iter().enumerate() {
            if !value.is_finite() {
                return Err(EngineError::NonFiniteWeight { index, value });
            }
        }
        for step in &steps[..steps.len() - 1] {
            if step.is_terminal() {
                return Err(EngineError::InvalidConfig(
                    "terminal step in the middle of a trajectory".into(),
                ));
            }
        }
        let status = status_for(&steps, max_steps);
        Ok(Particle {
            steps,
            step_rewards: rewards,
            status,
            lineage: Vec::new(),
            max_steps,
            whole_score: None,
        })
    }

    /// Append one scored step, returning the grown particle.
    pub fn extend(&self, step: Step, reward: f64) -> Result<Self, EngineError> {
        if self.status == ParticleStatus::Finished {
            return Err(EngineError::ExtendFinished);
        }
        if !reward.is_finite() {
            return Err(EngineError::NonFiniteWeight {
                index: self.steps.len(),
                value: reward,
            });
        }
        let mut grown = self.clone();
        grown.steps.push(step);
        grown.step_rewards.push(reward);
        grown.status = status_for(&grown.steps, grown.max_steps);
        grown.whole_score = None;
        Ok(grown)
    }

    /// Deep, independent copy with one more lineage entry. Finished particles
    /// may be forked but the copy stays finished.
    pub fn fork(&self, round: usize, parent: usize) -> Self {
        let mut copy = self.clone();
        copy.lineage.push(LineageEntry { round, parent });
        copy
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn step_rewards(&self) -> &[f64] {
        &self.step_rewards
    }

    pub fn status(&self) -> ParticleStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == ParticleStatus::Active
    }

    pub fn is_finished(&self) -> bool {
        self.status == ParticleStatus::Finished
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Cached whole-trajectory score, if one was recorded after finishing.
    pub fn whole_score_cache(&self) -> Option<f64> {
        self.whole_score
    }

    pub(crate) fn set_whole_score(&mut self, score: f64) {
        self.whole_score = Some(score);
    }

    /// The trajectory rendered with the step delimiter re-attached to every
    /// step, reproducing the exact text stream the generator produced.
    pub fn rendered_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(STEP_DELIMITER);
            out.push_str(&step.text);
        }
        out
    }

    /// Content hash of the trajectory and its status. Step texts are length-
    /// prefixed so distinct step splits never collide.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for step in &self.steps {
            hasher.update((step.text.len() as u64).to_le_bytes());
            hasher.update(step.text.as_bytes());
            hasher.update([match step.finish {
                FinishReason::Continuing => 0u8,
                FinishReason::Eos => 1,
                FinishReason::MaxTokens => 2,
            }]);
        }
        hasher.update([match self.status {
            ParticleStatus::Active => 0u8,
            ParticleStatus::Finished => 1,
        }]);
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in &digest[..8] {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Proposes steps. Implementations must tolerate concurrent calls up to the
/// configured in-flight limit.
pub trait TransitionBackend: Send + Sync {
    /// The first step of a trajectory.
    fn init_step(&self, prompt: &Prompt, rng: &mut dyn RngCore) -> Result<Step, BackendError>;

    /// The next step given the trajectory so far.
    fn next_step(&self, prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<Step, BackendError>;

    fn generation_temperature(&self) -> f64;

    /// Synthetic backends are reproducible given an RNG stream; live model
    /// servers are not, and runs against them are flagged in run records.
    fn deterministic(&self) -> bool {
        false
    }
}

/// Scores steps. `score_steps` returns one value per step; `score_whole`
/// collapses the trajectory to a single scalar regardless of step count.
pub trait RewardBackend: Send + Sync {
    fn score_steps(
        &self,
        prompt: &Prompt,
        steps: &[Step],
        rng: &mut dyn RngCore,
    ) -> Result<StepRewardVector, BackendError>;

    fn score_whole(&self, prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<f64, BackendError>;
}
