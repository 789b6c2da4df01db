//! Wire formats.
//!
//! Generation requests speak the OpenAI-compatible chat-completions shape:
//! system and user messages carry the prompt, a trailing assistant message
//! carries the accumulated trajectory as a continuation prefix. The step
//! delimiter is always among the stop sequences and is re-prefixed onto the
//! assistant message, so stored step text never contains the leading
//! delimiter itself.
//!
//! Reward requests use a minimal first-party contract: the rendered scoring
//! input with reward-token boundaries is POSTed along with the question and
//! mode, and the server answers with a score list. In per-step mode a
//! boundary marker follows every step; in whole mode exactly one terminal
//! marker follows the concatenated trajectory.

use serde::{Deserialize, Serialize};
use stepsmc_core::{Prompt, Step, STEP_DELIMITER};

/// Boundary marker the reward model scores at.
pub const REWARD_TOKEN: &str = "<reward_token>";

/// One step-generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_text: String,
    pub question_text: String,
    pub prior_steps: Vec<String>,
    pub stop_sequences: Vec<String>,
    pub max_tokens: usize,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(
        prompt: &Prompt,
        steps: &[Step],
        max_tokens: usize,
        temperature: f64,
        seed: Option<u64>,
    ) -> Self {
        GenerationRequest {
            system_text: prompt.system_text().to_string(),
            question_text: prompt.question_text().to_string(),
            prior_steps: steps.iter().map(|s| s.text().to_string()).collect(),
            stop_sequences: vec![STEP_DELIMITER.to_string()],
            max_tokens,
            temperature,
            seed,
        }
    }

    /// The assistant continuation: every prior step with its delimiter
    /// re-attached, then the delimiter priming the next step.
    pub fn assistant_prefix(&self) -> String {
        let mut prefix = String::new();
        for step in &self.prior_steps {
            prefix.push_str(STEP_DELIMITER);
            prefix.push_str(step);
        }
        prefix.push_str(STEP_DELIMITER);
        prefix
    }

    /// Serialized chat-completions body.
    pub fn body_json(&self, model: &str) -> String {
        #[derive(Serialize)]
        struct Message<'a> {
            role: &'a str,
            content: &'a str,
        }
        #[derive(Serialize)]
        struct Body<'a> {
            model: &'a str,
            messages: Vec<Message<'a>>,
            stop: &'a [String],
            max_tokens: usize,
            temperature: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            seed: Option<u64>,
            n: u32,
        }
        let prefix = self.assistant_prefix();
        let body = Body {
            model,
            messages: vec![
                Message {
                    role: "system",
                    content: &self.system_text,
                },
                Message {
                    role: "user",
                    content: &self.question_text,
                },
                Message {
                    role: "assistant",
                    content: &prefix,
                },
            ],
            stop: &self.stop_sequences,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            seed: self.seed,
            n: 1,
        };
        serde_json::to_string(&body).expect("serializable body")
    }
}

/// Whether the reward model scores every step or the trajectory as a whole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    PerStep,
    Whole,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::PerStep => "per_step",
            ScoreMode::Whole => "whole",
        }
    }
}

/// One scoring request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrmScoreRequest {
    pub question_text: String,
    pub steps: Vec<String>,
    pub mode: ScoreMode,
}

impl PrmScoreRequest {
    pub fn new(prompt: &Prompt, steps: &[Step], mode: ScoreMode) -> Self {
        PrmScoreRequest {
            question_text: prompt.question_text().to_string(),
            steps: steps.iter().map(|s| s.text().to_string()).collect(),
            mode,
        }
    }

    /// The scoring input with reward-token boundaries placed per mode. Step
    /// text passes through byte-for-byte.
    pub fn rendered_input(&self) -> String {
        let mut out = String::new();
        match self.mode {
            ScoreMode::PerStep => {
                for step in &self.steps {
                    out.push_str(STEP_DELIMITER);
                    out.push_str(step);
                    out.push('\n');
                    out.push_str(REWARD_TOKEN);
                    out.push('\n');
                }
            }
            ScoreMode::Whole => {
                for step in &self.steps {
                    out.push_str(STEP_DELIMITER);
                    out.push_str(step);
                    out.push('\n');
                }
                out.push_str(REWARD_TOKEN);
                out.push('\n');
            }
        }
        out
    }

    /// Serialized scoring body.
    pub fn body_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            question: &'a str,
            input: String,
            mode: &'a str,
        }
        serde_json::to_string(&Body {
            question: &self.question_text,
            input: self.rendered_input(),
            mode: self.mode.as_str(),
        })
        .expect("serializable body")
    }
}

/// Reply shape of the scoring endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Chat-completions reply, reduced to the fields the client reads.
#[derive(Debug, Clone, Deserialize)]
pub struct ChatCompletionResponse {
    #[serde(default)]
    pub id: Option<String>,
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessageBody,
    pub finish_reason: Option<String>,
    /// Which stop sequence fired, when the server reports it. Absent or null
    /// on a natural end of sequence.
    #[serde(default)]
    pub stop_reason: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatMessageBody {
    #[serde(default)]
    pub content: Option<String>,
}
