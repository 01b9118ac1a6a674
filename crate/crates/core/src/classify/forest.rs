use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{CartGrower, Tree};
use super::Dataset;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    /// Candidate features per split; `None` means `⌈√d⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            min_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub tree_seeds: Vec<u64>,
}

impl ForestModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.5;
        }
        self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Trees are grown in parallel; tree `b` draws its bootstrap sample and
/// feature subsets from its own stream seeded by `(seed, b)`, so the result
/// does not depend on scheduling.
pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> ForestModel {
    let d = data.d();
    let k = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let tree_seeds: Vec<u64> = (0..params.trees as u64)
        .map(|b| seed::derive_indexed(seed, "forest-tree", b))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seed::rng(s);
            let n = data.n();
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            CartGrower::new(data, params.max_depth, params.min_split, Some(k), Some(&mut rng)).grow(&sample)
        })
        .collect();
    ForestModel { trees, tree_seeds }
}
