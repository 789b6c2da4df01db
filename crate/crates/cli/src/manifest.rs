//! Declarative run manifest: a TOML file with nested sections, overridable by
//! CLI flags. Every run embeds its fully resolved manifest in the record file
//! so results stay traceable to their configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use stepsmc_core::{AggregationMode, BudgetAllocation, PFConfig, WeightTransform};
use stepsmc_gateway::GatewayConfig;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub run: RunSection,
    pub engine: EngineSection,
    pub backend: BackendSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub method: String,
    pub seed: u64,
    /// Number of synthetic questions when no dataset file is given.
    pub questions: usize,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Concurrent questions in flight.
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            method: "pf".into(),
            seed: 0,
            questions: 20,
            dataset: None,
            out: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub particles: usize,
    pub iterations: usize,
    pub chains: usize,
    /// Hottest-first ladder; derived geometrically from the softmax
    /// temperature when absent.
    pub chain_temperatures: Option<Vec<f64>>,
    pub aggregation: String,
    pub softmax_temperature: f64,
    pub generation_temperature: f64,
    pub max_steps: usize,
    pub weight_transform: String,
    pub in_flight: usize,
    pub dvts_width: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            particles: 16,
            iterations: 1,
            chains: 1,
            chain_temperatures: None,
            aggregation: "last".into(),
            softmax_temperature: 1.0,
            generation_temperature: 0.8,
            max_steps: 40,
            weight_transform: "raw".into(),
            in_flight: 1,
            dvts_width: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// `noisy` or `live`.
    pub kind: BackendKind,
    pub noisy: NoisySection,
    pub live: LiveSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Noisy,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisySection {
    pub branching: usize,
    pub depth: usize,
    pub sigma: f64,
    pub wrong_step_reward: f64,
    pub deterministic_noise: bool,
}

impl Default for NoisySection {
    fn default() -> Self {
        NoisySection {
            branching: 4,
            depth: 4,
            sigma: 0.3,
            wrong_step_reward: 0.0,
            deterministic_noise: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSection {
    pub policy_url: String,
    pub reward_url: String,
    pub model: String,
    /// Environment variable holding the API key, read at run time.
    pub api_key_env: String,
    pub generation_timeout_s: u64,
    pub scoring_timeout_s: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_tokens_per_step: usize,
    pub send_seed: bool,
}

impl Default for LiveSection {
    fn default() -> Self {
        LiveSection {
            policy_url: String::new(),
            reward_url: String::new(),
            model: "default".into(),
            api_key_env: "STEPSMC_API_KEY".into(),
            generation_timeout_s: 120,
            scoring_timeout_s: 60,
            max_retries: 3,
            initial_backoff_ms: 200,
            max_tokens_per_step: 512,
            send_seed: true,
        }
    }
}

/// The benchmark method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pf,
    Pg,
    Pt,
    Bon,
    Wbon,
    Dvts,
    Pass1,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pf" => Method::Pf,
            "pg" => Method::Pg,
            "pt" => Method::Pt,
            "bon" => Method::Bon,
            "wbon" => Method::Wbon,
            "dvts" => Method::Dvts,
            "pass1" => Method::Pass1,
            other => bail!("unknown method '{other}' (expected pf, pg, pt, bon, wbon, dvts, or pass1)"),
        })
    }
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pf => "pf",
            Method::Pg => "pg",
            Method::Pt => "pt",
            Method::Bon => "bon",
            Method::Wbon => "wbon",
            Method::Dvts => "dvts",
            Method::Pass1 => "pass1",
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let manifest: Manifest = toml::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        Ok(manifest)
    }

    pub fn method(&self) -> Result<Method> {
        self.run.method.parse()
    }

    pub fn aggregation(&self) -> Result<AggregationMode> {
        self.engine
            .aggregation
            .parse()
            .map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn weight_transform(&self) -> Result<WeightTransform> {
        match self.engine.weight_transform.as_str() {
            "raw" => Ok(WeightTransform::Raw),
            "logit" => Ok(WeightTransform::Logit),
            other => bail!("unknown weight transform '{other}' (expected raw or logit)"),
        }
    }

    /// Engine configuration with the given seed slot.
    pub fn pf_config(&self, seed: u64) -> Result<PFConfig> {
        let cfg = PFConfig {
            n_particles: self.engine.particles,
            max_steps: self.engine.max_steps,
            aggregation: self.aggregation()?,
            softmax_temperature: self.engine.softmax_temperature,
            generation_temperature: self.engine.generation_temperature,
            seed,
            weight_transform: self.weight_transform()?,
            in_flight_limit: self.engine.in_flight,
        };
        cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }

    /// Budget allocation for parallel tempering.
    pub fn allocation(&self) -> Result<BudgetAllocation> {
        let alloc = match &self.engine.chain_temperatures {
            Some(temps) => BudgetAllocation::new(self.engine.particles, self.engine.iterations, temps.clone()),
            None => BudgetAllocation::with_default_ladder(
                self.engine.particles,
                self.engine.iterations,
                self.engine.chains,
                self.engine.softmax_temperature,
            ),
        };
        alloc.map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        let live = &self.backend.live;
        GatewayConfig {
            policy_url: live.policy_url.clone(),
            reward_url: live.reward_url.clone(),
            model: live.model.clone(),
            api_key: std::env::var(&live.api_key_env).ok(),
            generation_timeout: Duration::from_secs(live.generation_timeout_s),
            scoring_timeout: Duration::from_secs(live.scoring_timeout_s),
            max_retries: live.max_retries,
            initial_backoff: Duration::from_millis(live.initial_backoff_ms),
            max_tokens_per_step: live.max_tokens_per_step,
            generation_temperature: self.engine.generation_temperature,
            in_flight_limit: self.engine.in_flight,
            send_seed: live.send_seed,
        }
    }

    /// Per-method budget in complete-generation equivalents.
    pub fn budget(&self) -> Result<usize> {
        Ok(match self.method()? {
            Method::Pf => self.engine.particles,
            Method::Pg => self.engine.particles * self.engine.iterations,
            Method::Pt => self.engine.particles * self.engine.iterations * self.engine.chains,
            Method::Bon | Method::Wbon | Method::Dvts => self.engine.particles,
            Method::Pass1 => 1,
        })
    }

    /// Identifier of the evaluation data; reports refuse to mix datasets.
    pub fn dataset_id(&self) -> String {
        match (&self.run.dataset, self.backend.kind) {
            (Some(path), _) => path.display().to_string(),
            (None, BackendKind::Noisy) => {
                let n = &self.backend.noisy;
                format!("noisy-b{}-d{}-sigma{}", n.branching, n.depth, n.sigma)
            }
            (None, BackendKind::Live) => "live-unnamed".into(),
        }
    }

    /// The resolved manifest as TOML, embedded into run records.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable manifest")
    }

    /// Reconfigure the budget-bearing knob for a sweep point.
    pub fn set_budget(&mut self, budget: usize) -> Result<()> {
        match self.method()? {
            Method::Pf | Method::Bon | Method::Wbon => self.engine.particles = budget,
            Method::Dvts => {
                if !budget.is_multiple_of(self.engine.dvts_width) {
                    bail!(
                        "budget {budget} is not divisible by dvts_width {}",
                        self.engine.dvts_width
                    );
                }
                self.engine.particles = budget;
            }
            Method::Pg => {
                if !budget.is_multiple_of(self.engine.iterations) {
                    bail!("budget {budget} is not divisible by iterations {}", self.engine.iterations);
                }
                self.engine.particles = budget / self.engine.iterations;
            }
            Method::Pt => {
                let divisor = self.engine.iterations * self.engine.chains;
                if !budget.is_multiple_of(divisor) {
                    bail!("budget {budget} is not divisible by iterations x chains = {divisor}");
                }
                self.engine.particles = budget / divisor;
            }
            Method::Pass1 => bail!("pass1 has a fixed budget of 1"),
        }
        Ok(())
    }
}
