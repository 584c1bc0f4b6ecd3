//! Aggregate tables with bootstrap half-widths, as JSON or markdown.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{block_bootstrap, BootstrapResult, UpdateOutcome};

/// Update metrics in report column order.
pub const UPDATE_METRICS: [&str; 6] = ["main", "paraphrase", "entailed", "local_neutral_retain", "all_retain", "delta_acc"];

fn metric_header(name: &str) -> &str {
    match name {
        "main" => "Main Input",
        "paraphrase" => "Paraphrase",
        "entailed" => "Entailed",
        "local_neutral_retain" => "LN Retain",
        "all_retain" => "All Retain",
        "delta_acc" => "Δ-Acc",
        other => other,
    }
}

fn metric_value(o: &UpdateOutcome, name: &str) -> Option<f64> {
    match name {
        "main" => Some(f64::from(u8::from(o.success_main))),
        "paraphrase" => o.success_paraphrase,
        "entailed" => o.success_entailed,
        "local_neutral_retain" => o.retain_local_neutral,
        "all_retain" => o.retain_all,
        "delta_acc" => o.delta_acc,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub estimate: f64,
    pub half_width: f64,
    /// Records contributing to the cell.
    pub records: usize,
}

impl From<&BootstrapResult> for MetricCell {
    fn from(b: &BootstrapResult) -> Self {
        Self { estimate: b.estimate, half_width: b.half_width, records: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    /// Missing metrics have no qualifying data.
    pub metrics: IndexMap<String, MetricCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// One row from outcome sets, one set per evaluation seed, all over the same
/// records in the same order. Each metric is bootstrapped over the records
/// defined under every seed.
pub fn update_row(name: &str, runs: &[Vec<UpdateOutcome>], resamples: usize, seed: u64) -> Result<ReportRow> {
    let first = runs.first().filter(|r| !r.is_empty()).ok_or_else(|| Error::Empty("report needs outcomes".into()))?;
    for run in runs {
        let same = run.len() == first.len() && run.iter().zip(first).all(|(a, b)| a.record_id == b.record_id);
        if !same {
            return Err(Error::Invalid("seed runs cover different records".into()));
        }
    }
    let mut metrics = IndexMap::new();
    for metric in UPDATE_METRICS {
        let matrix: Vec<Vec<f64>> = (0..first.len())
            .filter_map(|i| runs.iter().map(|run| metric_value(&run[i], metric)).collect::<Option<Vec<f64>>>())
            .collect();
        if matrix.is_empty() {
            continue;
        }
        let b = block_bootstrap(&matrix, resamples, seed, None)?;
        metrics.insert(metric.to_string(), MetricCell { records: matrix.len(), ..MetricCell::from(&b) });
    }
    Ok(ReportRow { name: name.into(), metrics })
}

/// `value (half-width)` on the percentage scale with one decimal.
pub fn format_cell(c: &MetricCell) -> String {
    format!("{} ({})", pct(c.estimate), pct(c.half_width))
}

/// Percent with one decimal, halves rounded away from zero.
fn pct(x: f64) -> String {
    let s = format!("{:.1}", (1000.0 * x).round() / 10.0);
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

impl Report {
    pub fn new(title: impl Into<String>, rows: Vec<ReportRow>) -> Self {
        let mut columns: Vec<String> = Vec::new();
        for row in &rows {
            for k in row.metrics.keys() {
                if !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
        Self { title: title.into(), columns, rows }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("## {}\n\n| Condition |", self.title);
        for c in &self.columns {
            let _ = write!(s, " {} |", metric_header(c));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.columns.len()));
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "| {} |", row.name);
            for c in &self.columns {
                let cell = row.metrics.get(c).map_or_else(|| "n/a".to_string(), format_cell);
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
        s
    }

    /// Rows of several reports under one title, in order.
    pub fn merge(title: impl Into<String>, reports: &[Report]) -> Self {
        Self::new(title, reports.iter().flat_map(|r| r.rows.iter().cloned()).collect())
    }
}
