//! Budget sweeps: run the configured method at each budget and emit a curve.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::manifest::Manifest;
use crate::runner::run_benchmark;
use crate::svg::{line_chart, Series};

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub budget: usize,
    pub questions: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Run the manifest's method at every budget. Budgets must be positive and
/// strictly ascending.
pub fn sweep_budget(manifest: &Manifest, budgets: &[usize]) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() {
        bail!("no budgets given");
    }
    if budgets[0] == 0 {
        bail!("budgets must be positive");
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        bail!("budgets must be strictly ascending");
    }
    let mut rows = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let mut point = manifest.clone();
        point.set_budget(budget)?;
        let summary = run_benchmark(&point, None)?;
        let correct = summary.records.iter().filter(|r| r.correct).count();
        rows.push(SweepRow {
            method: point.run.method.clone(),
            budget,
            questions: summary.records.len(),
            correct,
            accuracy: summary.accuracy.unwrap_or(0.0),
        });
        eprintln!(
            "sweep {} budget {budget}: accuracy {:.4}",
            point.run.method,
            summary.accuracy.unwrap_or(0.0)
        );
    }
    Ok(rows)
}

/// Serialize sweep rows as CSV.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from("method,budget,questions,correct,accuracy\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            row.method, row.budget, row.questions, row.correct, row.accuracy
        ));
    }
    csv
}

/// Write the sweep CSV and, optionally, an SVG chart.
pub fn write_outputs(rows: &[SweepRow], csv_path: &Path, svg_path: Option<&Path>) -> Result<()> {
    std::fs::write(csv_path, rows_to_csv(rows)).with_context(|| format!("writing {}", csv_path.display()))?;
    if let Some(path) = svg_path {
        let series = vec![Series {
            name: rows.first().map(|r| r.method.clone()).unwrap_or_default(),
            points: rows.iter().map(|r| (r.budget as f64, r.accuracy)).collect(),
        }];
        let svg = line_chart("accuracy vs budget", "budget", "accuracy", &series);
        std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
