//! Report emission: aggregate record files into accuracy-by-method-and-budget
//! tables and charts. Record files are order-independent inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::svg::{line_chart, Series};

/// The slice of a run record the report needs.
#[derive(Debug, Deserialize)]
struct RecordView {
    method: String,
    budget: usize,
    dataset_id: String,
    correct: bool,
}

/// Aggregated accuracy for one (method, budget) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub budget: usize,
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Read record files and aggregate. All records must come from the same
/// dataset; mixing datasets is an error.
pub fn aggregate_records(inputs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    if inputs.is_empty() {
        bail!("no record files given");
    }
    let mut dataset: Option<String> = None;
    let mut cells: BTreeMap<(String, usize), (usize, usize)> = BTreeMap::new();
    for path in inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RecordView = serde_json::from_str(line)
                .with_context(|| format!("{}:{}: malformed record", path.display(), index + 1))?;
            match &dataset {
                None => dataset = Some(record.dataset_id.clone()),
                Some(seen) if *seen != record.dataset_id => bail!(
                    "mixed datasets: '{seen}' and '{}' ({}:{})",
                    record.dataset_id,
                    path.display(),
                    index + 1
                ),
                _ => {}
            }
            let cell = cells.entry((record.method, record.budget)).or_insert((0, 0));
            cell.0 += 1;
            cell.1 += record.correct as usize;
        }
    }
    if cells.is_empty() {
        bail!("record files contain no records");
    }
    Ok(cells
        .into_iter()
        .map(|((method, budget), (questions, correct))| ReportRow {
            method,
            budget,
            questions,
            correct,
            accuracy: correct as f64 / questions as f64,
        })
        .collect())
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut csv = String::from("method,budget,questions,correct,accuracy\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            row.method, row.budget, row.questions, row.correct, row.accuracy
        ));
    }
    csv
}

/// Emit the aggregate CSV and, optionally, a multi-series SVG chart.
pub fn emit_report(inputs: &[PathBuf], csv_path: &Path, svg_path: Option<&Path>) -> Result<Vec<ReportRow>> {
    let rows = aggregate_records(inputs)?;
    std::fs::write(csv_path, rows_to_csv(&rows)).with_context(|| format!("writing {}", csv_path.display()))?;
    if let Some(path) = svg_path {
        let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &rows {
            by_method
                .entry(row.method.as_str())
                .or_default()
                .push((row.budget as f64, row.accuracy));
        }
        let series: Vec<Series> = by_method
            .into_iter()
            .map(|(name, points)| Series {
                name: name.to_string(),
                points,
            })
            .collect();
        let svg = line_chart("accuracy vs budget", "budget", "accuracy", &series);
        std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(rows)
}
