//! CART with Gini impurity.
//!
//! Candidate thresholds are midpoints between consecutive distinct sorted
//! values; rows with `x <= threshold` go left. Equal gains keep the lowest
//! feature index, then the lowest threshold. Leaves store the positive-class
//! fraction of their rows.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::seed::StageRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in pre-order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(t, *left).max(rec(t, *right)),
            }
        }
        rec(self, 0)
    }
}

/// Midpoint threshold guarded against rounding onto the upper value.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// `n · gini` for a node with `pos` positives among `n` rows.
fn weighted_gini(n: f64, pos: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n - (pos * pos + (n - pos) * (n - pos)) / n
    }
}

pub(crate) struct CartGrower<'a> {
    data: &'a Dataset,
    max_depth: usize,
    min_split: usize,
    max_features: Option<usize>,
    rng: Option<&'a mut StageRng>,
    nodes: Vec<Node>,
}

impl<'a> CartGrower<'a> {
    pub(crate) fn new(
        data: &'a Dataset,
        max_depth: usize,
        min_split: usize,
        max_features: Option<usize>,
        rng: Option<&'a mut StageRng>,
    ) -> Self {
        Self {
            data,
            max_depth,
            min_split,
            max_features,
            rng,
            nodes: Vec::new(),
        }
    }

    /// Grows a tree over `sample`, which may repeat row indices.
    pub(crate) fn grow(mut self, sample: &[usize]) -> Tree {
        if sample.is_empty() {
            return Tree::leaf(0.0);
        }
        self.node(sample.to_vec(), 0);
        Tree { nodes: self.nodes }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.data.d();
        match (self.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < d => {
                let mut f = index::sample(rng, d, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize], pos: usize) -> Option<(usize, f64)> {
        let labels = self.data.labels();
        let n = rows.len() as f64;
        let parent = weighted_gini(n, pos as f64);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
        for f in self.candidate_features() {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.data.value(i, f), labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0.0;
            for k in 0..pairs.len() - 1 {
                left_pos += f64::from(pairs[k].1);
                if pairs[k].0 == pairs[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let gain = parent - weighted_gini(nl, left_pos) - weighted_gini(n - nl, pos as f64 - left_pos);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, midpoint(pairs[k].0, pairs[k + 1].0)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn node(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let labels = self.data.labels();
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        let value = pos as f64 / rows.len() as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value });
        if depth >= self.max_depth || rows.len() < self.min_split || pos == 0 || pos == rows.len() {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, pos) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.data.value(i, feature) <= threshold);
        let left = self.node(l, depth + 1);
        let right = self.node(r, depth + 1);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

pub fn train_tree(data: &Dataset, params: &TreeParams) -> Tree {
    let rows: Vec<usize> = (0..data.n()).collect();
    CartGrower::new(data, params.max_depth, params.min_split, None, None).grow(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn xor() -> Dataset {
        Dataset::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]], &[0, 1, 1, 0]).unwrap()
    }

    /// Best training accuracy over all depth-2 trees with midpoint thresholds.
    fn exhaustive_depth2_accuracy(data: &Dataset) -> f64 {
        let thresholds = |f: usize| {
            let mut v: Vec<f64> = (0..data.n()).map(|i| data.value(i, f)).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect::<Vec<_>>()
        };
        let leaf_acc = |rows: &[usize]| {
            let pos = rows.iter().filter(|&&i| data.labels()[i] == 1).count();
            pos.max(rows.len() - pos)
        };
        let split = |rows: &[usize], f: usize, t: f64| -> (Vec<usize>, Vec<usize>) {
            rows.iter().partition(|&&i| data.value(i, f) <= t)
        };
        let all: Vec<usize> = (0..data.n()).collect();
        let mut best = leaf_acc(&all);
        for f in 0..data.d() {
            for t in thresholds(f) {
                let (l, r) = split(&all, f, t);
                let side_best = |rows: &[usize]| {
                    let mut b = leaf_acc(rows);
                    for g in 0..data.d() {
                        for u in thresholds(g) {
                            let (a, c) = split(rows, g, u);
                            b = b.max(leaf_acc(&a) * usize::from(!a.is_empty()) + leaf_acc(&c) * usize::from(!c.is_empty()));
                        }
                    }
                    b
                };
                best = best.max(side_best(&l) + side_best(&r));
            }
        }
        best as f64 / data.n() as f64
    }

    #[test]
    fn pure_labels_single_leaf() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], &[1, 1, 1]).unwrap();
        let t = train_tree(&d, &TreeParams::default());
        assert_eq!(t.nodes, vec![Node::Leaf { value: 1.0 }]);
    }

    #[test]
    fn xor_solved_at_depth_two() {
        let d = xor();
        assert_eq!(exhaustive_depth2_accuracy(&d), 1.0);
        let t = train_tree(&d, &TreeParams { max_depth: 2, min_split: 2 });
        let acc = d.rows().zip(d.labels()).filter(|(x, &y)| (t.predict_row(x) >= 0.5) == (y == 1)).count();
        assert_eq!(acc, 4);
        // tie-break: lowest feature index at the root
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn depth_zero_is_prior() {
        let d = xor();
        let t = train_tree(&d, &TreeParams { max_depth: 0, min_split: 2 });
        assert_eq!(t.nodes, vec![Node::Leaf { value: 0.5 }]);
    }

    #[test]
    fn respects_max_depth_and_paths() {
        let mut rng = crate::seed::rng(1);
        let rows: Vec<Vec<f64>> = (0..300).map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from((r[0] * 7.0).sin() + r[1] > 0.6)).collect();
        let d = Dataset::from_rows(&rows, &labels).unwrap();
        for depth in [1, 3, 6] {
            let t = train_tree(&d, &TreeParams { max_depth: depth, min_split: 2 });
            assert!(t.depth() <= depth);
            // stored leaf values equal the label fraction of the rows routed there
            let mut stats = std::collections::HashMap::<usize, (f64, f64)>::new();
            for (x, &y) in d.rows().zip(d.labels()) {
                let e = stats.entry(t.leaf_index(x)).or_default();
                e.0 += 1.0;
                e.1 += f64::from(y);
            }
            for (leaf, (n, pos)) in stats {
                match t.nodes[leaf] {
                    Node::Leaf { value } => assert!((value - pos / n).abs() < 1e-12),
                    _ => panic!("not a leaf"),
                }
            }
        }
    }

    #[test]
    fn midpoint_guard() {
        assert_eq!(midpoint(1.0, 3.0), 2.0);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert!(midpoint(a, b) < b);
    }

    #[test]
    fn json_round_trip() {
        let t = train_tree(&xor(), &TreeParams::default());
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Tree>(&s).unwrap(), t);
    }
}
