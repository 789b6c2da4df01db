//! Dataset ingestion: line-delimited JSON problem records.

use std::collections::HashSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// One benchmark problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub problem: String,
    pub answer: String,
}

/// Read and validate a problem file. Each non-empty line is one JSON record
/// with `id`, `problem`, and `answer` fields; ids must be unique.
pub fn ingest_dataset(path: &Path) -> Result<Vec<ProblemRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading dataset {}", path.display()))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProblemRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{line_number}: malformed problem record", path.display()))?;
        if record.problem.is_empty() {
            bail!("{}:{line_number}: empty problem text", path.display());
        }
        if !seen.insert(record.id.clone()) {
            bail!("{}:{line_number}: duplicate id '{}'", path.display(), record.id);
        }
        records.push(record);
    }
    if records.is_empty() {
        eprintln!("warning: dataset {} contains no records", path.display());
    }
    Ok(records)
}
