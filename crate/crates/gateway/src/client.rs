//! Blocking HTTP clients for policy and reward endpoints.
//!
//! Both clients retry idempotently on transport failures and 5xx replies with
//! exponential backoff, bound their in-flight requests with a semaphore, and
//! tag every logical request with an id that failure reports carry.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::RngCore;
use thiserror::Error;

use stepsmc_core::{BackendError, Prompt, RewardBackend, Step, StepRewardVector, TransitionBackend};

use crate::protocol::{
    ChatCompletionResponse, GenerationRequest, PrmScoreRequest, ScoreMode, ScoreResponse,
};

/// Gateway construction failures.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to build HTTP client: {0}")]
    Http(#[from] reqwest::Error),
}

/// Endpoint and behavior settings shared by both clients.
#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Base URL of the policy server; requests go to `/v1/chat/completions`.
    pub policy_url: String,
    /// Base URL of the reward server; requests go to `/v1/score`.
    pub reward_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub generation_timeout: Duration,
    pub scoring_timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_tokens_per_step: usize,
    pub generation_temperature: f64,
    pub in_flight_limit: usize,
    /// Attach a derived seed to generation requests for servers that honor it.
    pub send_seed: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            policy_url: String::new(),
            reward_url: String::new(),
            model: "default".into(),
            api_key: None,
            generation_timeout: Duration::from_secs(120),
            scoring_timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_tokens_per_step: 512,
            generation_temperature: 0.8,
            in_flight_limit: 4,
            send_seed: true,
        }
    }
}

/// Cumulative call counts, shared with whoever wants telemetry.
#[derive(Debug, Default)]
pub struct CallCounters {
    pub generations: AtomicU64,
    pub scorings: AtomicU64,
    pub retries: AtomicU64,
}

/// Point-in-time copy of [`CallCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallStats {
    pub generations: u64,
    pub scorings: u64,
    pub retries: u64,
}

impl CallCounters {
    pub fn snapshot(&self) -> CallStats {
        CallStats {
            generations: self.generations.load(Ordering::Relaxed),
            scorings: self.scorings.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }
}

/// Counting semaphore bounding concurrent requests per endpoint.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore lock");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore lock");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

struct Endpoint {
    http: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    timeout: Duration,
    max_retries: u32,
    initial_backoff: Duration,
    counters: Arc<CallCounters>,
    semaphore: Semaphore,
    request_ids: AtomicU64,
}

impl Endpoint {
    fn new(base: &str, path: &str, timeout: Duration, config: &GatewayConfig) -> Result<Self, GatewayError> {
        if base.is_empty() {
            return Err(GatewayError::InvalidConfig("endpoint URL is empty".into()));
        }
        let url = format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'));
        Ok(Endpoint {
            http: reqwest::blocking::Client::builder().build()?,
            url,
            api_key: config.api_key.clone(),
            timeout,
            max_retries: config.max_retries,
            initial_backoff: config.initial_backoff,
            counters: Arc::new(CallCounters::default()),
            semaphore: Semaphore::new(config.in_flight_limit),
            request_ids: AtomicU64::new(0),
        })
    }

    /// POST a JSON body, retrying transport failures and 5xx replies with
    /// exponential backoff. 4xx replies fail immediately as protocol errors.
    fn post_json(&self, kind: &str, body: &str) -> Result<String, BackendError> {
        let _permit = self.semaphore.acquire();
        let request_id = format!("{kind}-{}", self.request_ids.fetch_add(1, Ordering::Relaxed));
        let mut last_error;
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let mut request = self
                .http
                .post(&self.url)
                .header("Content-Type", "application/json")
                .header("X-Request-Id", &request_id)
                .timeout(self.timeout)
                .body(body.to_string());
            if let Some(key) = &self.api_key {
                request = request.header("Authorization", format!("Bearer {key}"));
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    let text = response.text().unwrap_or_default();
                    if status.is_success() {
                        return Ok(text);
                    }
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_error = format!("status {status}");
                    } else {
                        return Err(BackendError::Protocol(format!(
                            "request {request_id}: status {status}: {text}"
                        )));
                    }
                }
                Err(e) => {
                    last_error = format!("transport: {e}");
                }
            }
            if attempts > self.max_retries {
                return Err(BackendError::RetriesExhausted {
                    attempts,
                    request_id,
                    last_error,
                });
            }
            self.counters.retries.fetch_add(1, Ordering::Relaxed);
            let backoff = self.initial_backoff * 2u32.saturating_pow(attempts - 1);
            std::thread::sleep(backoff);
        }
    }
}

/// Client for the policy (generation) endpoint.
pub struct PolicyClient {
    endpoint: Endpoint,
    model: String,
    max_tokens: usize,
    temperature: f64,
    send_seed: bool,
}

impl PolicyClient {
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        Ok(PolicyClient {
            endpoint: Endpoint::new(
                &config.policy_url,
                "v1/chat/completions",
                config.generation_timeout,
                config,
            )?,
            model: config.model.clone(),
            max_tokens: config.max_tokens_per_step,
            temperature: config.generation_temperature,
            send_seed: config.send_seed,
        })
    }

    pub fn counters(&self) -> Arc<CallCounters> {
        Arc::clone(&self.endpoint.counters)
    }

    /// Issue a generation request and classify the reply into a [`Step`].
    pub fn generate_step(&self, request: &GenerationRequest) -> Result<Step, BackendError> {
        self.endpoint.counters.generations.fetch_add(1, Ordering::Relaxed);
        let body = request.body_json(&self.model);
        let text = self.endpoint.post_json("gen", &body)?;
        let reply: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("malformed completion reply: {e}")))?;
        let choice = reply
            .choices
            .first()
            .ok_or_else(|| BackendError::Protocol("completion reply has no choices".into()))?;
        let content = choice.message.content.clone().unwrap_or_default();
        match choice.finish_reason.as_deref() {
            Some("length") => Ok(Step::max_tokens(content)),
            Some("stop") => {
                let stopped_on_delimiter = choice
                    .stop_reason
                    .as_deref()
                    .is_some_and(|s| request.stop_sequences.iter().any(|stop| stop == s));
                if stopped_on_delimiter {
                    Step::continuing(content)
                        .map_err(|_| BackendError::Protocol("server returned an empty step".into()))
                } else {
                    Ok(Step::eos(content))
                }
            }
            other => Err(BackendError::Protocol(format!(
                "unrecognized finish reason {other:?}"
            ))),
        }
    }
}

impl TransitionBackend for PolicyClient {
    fn init_step(&self, prompt: &Prompt, rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        self.next_step(prompt, &[], rng)
    }

    fn next_step(&self, prompt: &Prompt, steps: &[Step], rng: &mut dyn RngCore) -> Result<Step, BackendError> {
        let seed = self.send_seed.then(|| rng.next_u64());
        let request = GenerationRequest::new(prompt, steps, self.max_tokens, self.temperature, seed);
        self.generate_step(&request)
    }

    fn generation_temperature(&self) -> f64 {
        self.temperature
    }

    fn deterministic(&self) -> bool {
        false
    }
}

/// Client for the reward (scoring) endpoint.
pub struct RewardClient {
    endpoint: Endpoint,
}

impl RewardClient {
    pub fn new(config: &GatewayConfig) -> Result<Self, GatewayError> {
        Ok(RewardClient {
            endpoint: Endpoint::new(&config.reward_url, "v1/score", config.scoring_timeout, config)?,
        })
    }

    pub fn counters(&self) -> Arc<CallCounters> {
        Arc::clone(&self.endpoint.counters)
    }

    /// Issue a scoring request, validating the score count and range.
    pub fn score(&self, request: &PrmScoreRequest) -> Result<Vec<f64>, BackendError> {
        if request.steps.is_empty() {
            return Err(BackendError::Protocol("cannot score an empty trajectory".into()));
        }
        self.endpoint.counters.scorings.fetch_add(1, Ordering::Relaxed);
        let text = self.endpoint.post_json("score", &request.body_json())?;
        let reply: ScoreResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Protocol(format!("malformed score reply: {e}")))?;
        let expected = match request.mode {
            ScoreMode::PerStep => request.steps.len(),
            ScoreMode::Whole => 1,
        };
        if reply.scores.len() != expected {
            return Err(BackendError::Protocol(format!(
                "{} steps scored in {:?} mode but server returned {} values",
                request.steps.len(),
                request.mode,
                reply.scores.len()
            )));
        }
        for &score in &reply.scores {
            if !score.is_finite() || !(0.0..=1.0).contains(&score) {
                return Err(BackendError::InvalidScore(format!(
                    "score {score} outside [0, 1]"
                )));
            }
        }
        Ok(reply.scores)
    }
}

impl RewardBackend for RewardClient {
    fn score_steps(
        &self,
        prompt: &Prompt,
        steps: &[Step],
        _rng: &mut dyn RngCore,
    ) -> Result<StepRewardVector, BackendError> {
        let request = PrmScoreRequest::new(prompt, steps, ScoreMode::PerStep);
        let scores = self.score(&request)?;
        StepRewardVector::new(scores).map_err(|e| BackendError::InvalidScore(e.to_string()))
    }

    fn score_whole(&self, prompt: &Prompt, steps: &[Step], _rng: &mut dyn RngCore) -> Result<f64, BackendError> {
        let request = PrmScoreRequest::new(prompt, steps, ScoreMode::Whole);
        Ok(self.score(&request)?[0])
    }
}
