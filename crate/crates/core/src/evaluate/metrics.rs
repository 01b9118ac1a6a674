//! Threshold metrics and rank-based AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flags raised when a ratio has a zero denominator and was set to 0.
pub const FLAG_PRECISION_UNDEFINED: &str = "precision_undefined";
pub const FLAG_RECALL_UNDEFINED: &str = "recall_undefined";
pub const FLAG_F1_UNDEFINED: &str = "f1_undefined";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl MetricSet {
    pub const NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "auc"];

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.auc]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        Self {
            accuracy: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
            auc: v[4],
            flags: vec![],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|&n| n == name).map(|i| self.values()[i])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Positive prediction when `score >= threshold`.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Accuracy, precision, recall and F1 of the positive class, with the
/// flags that mark zero denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flags: Vec<String>,
}

fn ratio(num: usize, den: usize, flag: &str, flags: &mut Vec<String>) -> f64 {
    if den == 0 {
        flags.push(flag.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(c: &Confusion) -> ClassMetrics {
    let mut flags = vec![];
    let accuracy = if c.total() == 0 {
        0.0
    } else {
        (c.tp + c.tn) as f64 / c.total() as f64
    };
    let precision = ratio(c.tp, c.tp + c.fp, FLAG_PRECISION_UNDEFINED, &mut flags);
    let recall = ratio(c.tp, c.tp + c.fn_, FLAG_RECALL_UNDEFINED, &mut flags);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        flags.push(FLAG_F1_UNDEFINED.to_string());
        0.0
    };
    ClassMetrics {
        accuracy,
        precision,
        recall,
        f1,
        flags,
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.is_empty() {
        return Err(Error::invalid("metrics need at least one instance"));
    }
    if let Some(y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("label {y} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Area under the ROC curve as `U / (n₊·n₋)`, with tied scores given the
/// average of their ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC is undefined when only one class is present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * order[i..j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricSet> {
    let auc = auc(scores, labels)?;
    let c = class_metrics(&Confusion::from_scores(scores, labels, threshold));
    Ok(MetricSet {
        accuracy: c.accuracy,
        precision: c.precision,
        recall: c.recall,
        f1: c.f1,
        auc,
        flags: c.flags,
    })
}
