//! Aggregation over repeated runs and the experiment report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::MetricSet;
use super::ttest::TTestResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    /// A single run has no spread; its std is reported as 0.
    #[serde(default)]
    pub single_run: bool,
}

/// Element-wise mean and sample standard deviation (n − 1 denominator).
pub fn aggregate_runs(runs: &[MetricSet]) -> Result<Aggregate> {
    if runs.is_empty() {
        return Err(Error::EmptyAggregation("no runs to aggregate"));
    }
    let n = runs.len() as f64;
    let mut mean = [0.0; 5];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = [0.0; 5];
    if runs.len() > 1 {
        for r in runs {
            for ((s, v), m) in std.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
        // constant columns are exactly 0, not a rounding residue of the mean
        let first = runs[0].values();
        for (k, s) in std.iter_mut().enumerate() {
            if runs.iter().all(|r| r.values()[k] == first[k]) {
                *s = 0.0;
            }
        }
    }
    Ok(Aggregate {
        runs: runs.len(),
        mean: MetricSet::from_values(mean),
        std: MetricSet::from_values(std),
        single_run: runs.len() == 1,
    })
}

/// One (seed, setting, aggregation, classifier) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub setting: String,
    pub aggregation: String,
    pub classifier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setting: String,
    pub aggregation: String,
    pub classifier: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<Aggregate>,
    /// Fewer successful runs than seeds.
    pub partial: bool,
    /// Highest mean AUC among the classifiers of this setting and aggregation.
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestEntry {
    pub setting: String,
    pub classifier: String,
    pub metric: String,
    pub a: String,
    pub b: String,
    /// Seeds where both aggregations succeeded, in order.
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TTestResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A stage failure that aborted a whole seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedError {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub generated_at: String,
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub ttests: Vec<TTestEntry>,
    #[serde(default)]
    pub seed_errors: Vec<SeedError>,
    pub partial: bool,
}

pub const TIMESTAMP_FIELD: &str = "generated_at";

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("report: {e}")))
    }

    /// Serialized report with the timestamp removed, for determinism checks.
    pub fn to_json_without_timestamp(&self) -> Result<String> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Format(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove(TIMESTAMP_FIELD);
        }
        serde_json::to_string_pretty(&v).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn aggregate(&self, setting: &str, aggregation: &str, classifier: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|r| r.setting == setting && r.aggregation == aggregation && r.classifier == classifier)
    }

    /// Plain-text table with one row per aggregate: model setting,
    /// aggregation, classifier and each metric as `mean ± std`. The best
    /// classifier of each group is marked with `*`.
    pub fn render_table(&self) -> String {
        let header = ["Model", "Aggreg.", "Classifier", "Accuracy", "Precision", "Recall", "F1", "AUC"];
        let mut rows: Vec<[String; 8]> = vec![];
        for r in &self.aggregates {
            let cells: Vec<String> = match &r.summary {
                Some(a) => a
                    .mean
                    .values()
                    .iter()
                    .zip(a.std.values())
                    .map(|(m, s)| format!("{m:.2} ± {s:.2}"))
                    .collect(),
                None => vec!["failed".to_string(); 5],
            };
            let mut classifier = r.classifier.clone();
            if r.best {
                classifier.push('*');
            }
            if r.partial {
                classifier.push_str(" (partial)");
            }
            rows.push([
                r.setting.clone(),
                r.aggregation.clone(),
                classifier,
                cells[0].clone(),
                cells[1].clone(),
                cells[2].clone(),
                cells[3].clone(),
                cells[4].clone(),
            ]);
        }
        let mut width = header.map(|h| h.chars().count());
        for row in &rows {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(width).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let pad = w - c.chars().count();
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header.map(String::from)));
        let _ = writeln!(out, "{}", width.map(|w| "-".repeat(w)).join("  "));
        let mut last_setting: Option<&str> = None;
        for (row, r) in rows.iter().zip(&self.aggregates) {
            if last_setting.is_some_and(|s| s != r.setting) {
                out.push('\n');
            }
            last_setting = Some(&r.setting);
            let _ = writeln!(out, "{}", line(row));
        }
        let _ = writeln!(out, "\nmean ± std over {} seed(s): {:?}", self.seeds.len(), self.seeds);
        if !self.ttests.is_empty() {
            let _ = writeln!(out, "\npaired t-tests on per-seed AUC (alpha = 0.05):");
            for t in &self.ttests {
                match (&t.result, &t.error) {
                    (Some(r), _) => {
                        let _ = writeln!(
                            out,
                            "  {} {}: {} vs {}  t = {:.3}  df = {}  p = {:.4}{}",
                            t.setting,
                            t.classifier,
                            t.a,
                            t.b,
                            r.t,
                            r.df,
                            r.p,
                            if r.significant { "  (significant)" } else { "" }
                        );
                    }
                    (None, e) => {
                        let _ = writeln!(
                            out,
                            "  {} {}: {} vs {}  not computed: {}",
                            t.setting,
                            t.classifier,
                            t.a,
                            t.b,
                            e.as_deref().unwrap_or("unknown")
                        );
                    }
                }
            }
        }
        for e in &self.seed_errors {
            let _ = writeln!(out, "seed {} failed at {}: {}", e.seed, e.stage, e.message);
        }
        out
    }
}
