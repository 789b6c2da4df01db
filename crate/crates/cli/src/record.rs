//! Run records: one line of provenance per question.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Snapshot of one resampling round, nested under its chain and iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSnapshot {
    pub chain: usize,
    pub iteration: usize,
    pub round: usize,
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
    pub sampled_indices: Vec<usize>,
    pub particle_digests: Vec<String>,
}

/// Wall-clock and call-count telemetry. Excluded from canonical bytes, since
/// wall time varies run to run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordTelemetry {
    pub wall_ms: u64,
    pub generation_calls: u64,
    pub scoring_calls: u64,
    pub transport_retries: u64,
}

/// Full provenance of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub question_id: String,
    pub method: String,
    pub budget: usize,
    pub dataset_id: String,
    pub seed: u64,
    pub manifest_toml: String,
    pub backend_deterministic: bool,
    pub rounds: Vec<RoundSnapshot>,
    pub selected_answer: Option<String>,
    pub gold_answer: String,
    pub correct: bool,
    pub error: Option<String>,
    pub telemetry: RecordTelemetry,
}

impl RunRecord {
    /// The record as one JSON line, telemetry included.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("serializable record")
    }

    /// Deterministic form: telemetry zeroed. Synthetic-mode canonical bytes
    /// are identical across repeated runs of the same manifest and seed.
    pub fn canonical_json(&self) -> String {
        let mut canonical = self.clone();
        canonical.telemetry = RecordTelemetry::default();
        serde_json::to_string(&canonical).expect("serializable record")
    }
}

/// Hex digest over the canonical forms of a record sequence.
pub fn records_digest<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> String {
    let mut hasher = Sha256::new();
    for record in records {
        hasher.update(record.canonical_json().as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}
