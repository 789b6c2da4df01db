//! Per-round provenance emitted by the engine.
//!
//! Every resampling round records the pre-resampling particle set, the
//! aggregated weights, the resampling distribution, and the sampled parent
//! indices. Traces are what invariant tests and run records are built from.

use serde::{Deserialize, Serialize};

use crate::ssm::Particle;

/// Snapshot of one resampling round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based round counter; active particles hold `round` steps when scored.
    pub round: usize,
    /// Aggregated per-particle weights before any transform.
    pub weights: Vec<f64>,
    /// The resampling distribution actually sampled from.
    pub probs: Vec<f64>,
    /// Parent index chosen for every slot of the next set. In reference mode
    /// the final slot is pinned to the reference by construction.
    pub sampled_indices: Vec<usize>,
    /// The particle set the indices refer to.
    pub pre_resample: Vec<Particle>,
}

/// Weights of the finished set, after the loop has exited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTrace {
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Backend call counts for one engine invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineTelemetry {
    pub generation_calls: u64,
    pub scoring_calls: u64,
}

/// Result of one particle-filter pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub particles: Vec<Particle>,
    pub rounds: Vec<RoundTrace>,
    pub final_trace: FinalTrace,
    pub telemetry: EngineTelemetry,
}

/// The reference particle chosen between two Gibbs iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceChoice {
    /// 1-based iteration whose final weights the reference was sampled from;
    /// the reference seeds the following iteration.
    pub iteration: usize,
    /// Index of the reference within that iteration's final set.
    pub index: usize,
}

/// Result of a particle-Gibbs run: one filter outcome per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsOutcome {
    pub iterations: Vec<FilterOutcome>,
    pub references: Vec<ReferenceChoice>,
}

impl GibbsOutcome {
    /// The final iteration's particle set.
    pub fn final_particles(&self) -> &[Particle] {
        &self
            .iterations
            .last()
            .expect("at least one iteration")
            .particles
    }

    pub fn telemetry(&self) -> EngineTelemetry {
        let mut total = EngineTelemetry::default();
        for it in &self.iterations {
            total.generation_calls += it.telemetry.generation_calls;
            total.scoring_calls += it.telemetry.scoring_calls;
        }
        total
    }
}

/// One replica-exchange decision between neighboring chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapDecision {
    /// Gibbs iteration (1-based) after which the swap was attempted.
    pub iteration: usize,
    /// The hotter chain of the pair; the partner is `lower_chain + 1`.
    pub lower_chain: usize,
    /// Acceptance probability that governed the decision.
    pub acceptance: f64,
    pub swapped: bool,
}

/// Result of a parallel-tempering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperingOutcome {
    /// One Gibbs history per chain, ordered hottest to coldest.
    pub chains: Vec<GibbsOutcome>,
    pub swap_decisions: Vec<SwapDecision>,
}

impl TemperingOutcome {
    /// Final particle sets, one per chain.
    pub fn final_sets(&self) -> Vec<&[Particle]> {
        self.chains.iter().map(|c| c.final_particles()).collect()
    }

    pub fn telemetry(&self) -> EngineTelemetry {
        let mut total = EngineTelemetry::default();
        for chain in &self.chains {
            let t = chain.telemetry();
            total.generation_calls += t.generation_calls;
            total.scoring_calls += t.scoring_calls;
        }
        total
    }
}
