//! Pair features and the five classifiers: logistic regression, linear SVM,
//! CART decision tree, random forest, and second-order gradient boosting.
//!
//! All trainers are deterministic given their inputs and seed. Trained
//! models serialize to JSON through [`ModelParams`].

mod boost;
mod forest;
mod linear;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boost::{logistic_grad_hess, logistic_loss, train_boost, BoostModel, BoostParams};
pub use forest::{train_forest, ForestModel, ForestParams};
pub use linear::{
    hinge_objective, hinge_subgradient, logistic_gradient, logistic_objective, sigmoid, train_lr, train_svm,
    LinearModel, LinearParams,
};
pub use tree::{train_tree, Node, Tree, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Concat,
    Absdiff,
    AbsdiffProd,
    ConcatAbsdiffProd,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Concat => "concat",
            FeatureMode::Absdiff => "absdiff",
            FeatureMode::AbsdiffProd => "absdiff_prod",
            FeatureMode::ConcatAbsdiffProd => "concat_absdiff_prod",
        }
    }

    pub fn output_dim(self, d1: usize, d2: usize) -> usize {
        match self {
            FeatureMode::Concat => d1 + d2,
            FeatureMode::Absdiff => d1,
            FeatureMode::AbsdiffProd => 2 * d1,
            FeatureMode::ConcatAbsdiffProd => 4 * d1,
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown feature mode {s:?}")))
    }
}

/// Combines the patient vector `x1` and the lifted target vector `x2`.
pub fn build_features(x1: &[f64], x2: &[f64], mode: FeatureMode) -> Result<Vec<f64>> {
    if mode != FeatureMode::Concat && x1.len() != x2.len() {
        return Err(Error::DimMismatch {
            left: x1.len(),
            right: x2.len(),
        });
    }
    let absdiff = || x1.iter().zip(x2).map(|(a, b)| (a - b).abs());
    let prod = || x1.iter().zip(x2).map(|(a, b)| a * b);
    let mut out = Vec::with_capacity(mode.output_dim(x1.len(), x2.len()));
    match mode {
        FeatureMode::Concat => {
            out.extend_from_slice(x1);
            out.extend_from_slice(x2);
        }
        FeatureMode::Absdiff => out.extend(absdiff()),
        FeatureMode::AbsdiffProd => {
            out.extend(absdiff());
            out.extend(prod());
        }
        FeatureMode::ConcatAbsdiffProd => {
            out.extend_from_slice(x1);
            out.extend_from_slice(x2);
            out.extend(absdiff());
            out.extend(prod());
        }
    }
    Ok(out)
}

/// Row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    features: Vec<f64>,
    labels: Vec<u8>,
    ids: Vec<String>,
}

impl Dataset {
    pub fn new(d: usize, features: Vec<f64>, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        let n = labels.len();
        if features.len() != n * d {
            return Err(Error::DimMismatch {
                left: features.len(),
                right: n * d,
            });
        }
        if ids.len() != n {
            return Err(Error::invalid("one id per row is required"));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        Ok(Self {
            n,
            d,
            features,
            labels,
            ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[u8]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimMismatch { left: r.len(), right: d });
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(d, rows.concat(), labels.to_vec(), ids)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn value(&self, i: usize, f: usize) -> f64 {
        self.features[i * self.d + f]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    fn require_both_classes(&self) -> Result<()> {
        let pos = self.positives();
        if self.n < 2 || pos == 0 || pos == self.n {
            return Err(Error::invalid(format!(
                "training needs both classes; got {pos} positive of {}",
                self.n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Lr,
    Svm,
    Tree,
    Forest,
    Boost,
}

impl ClassifierKind {
    pub fn label(self) -> &'static str {
        match self {
            ClassifierKind::Lr => "LR",
            ClassifierKind::Svm => "SVM",
            ClassifierKind::Tree => "DT",
            ClassifierKind::Forest => "RF",
            ClassifierKind::Boost => "BOOST",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A classifier and its hyperparameters, as written in configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    Lr(#[serde(default)] LinearParams),
    Svm(#[serde(default)] LinearParams),
    Tree(#[serde(default)] TreeParams),
    Forest(#[serde(default)] ForestParams),
    Boost(#[serde(default)] BoostParams),
}

impl ClassifierSpec {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            ClassifierSpec::Lr(_) => ClassifierKind::Lr,
            ClassifierSpec::Svm(_) => ClassifierKind::Svm,
            ClassifierSpec::Tree(_) => ClassifierKind::Tree,
            ClassifierSpec::Forest(_) => ClassifierKind::Forest,
            ClassifierSpec::Boost(_) => ClassifierKind::Boost,
        }
    }

    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Lr => ClassifierSpec::Lr(LinearParams::default()),
            ClassifierKind::Svm => ClassifierSpec::Svm(LinearParams::default()),
            ClassifierKind::Tree => ClassifierSpec::Tree(TreeParams::default()),
            ClassifierKind::Forest => ClassifierSpec::Forest(ForestParams::default()),
            ClassifierKind::Boost => ClassifierSpec::Boost(BoostParams::default()),
        }
    }

    /// `seed` only matters for the forest.
    pub fn train(&self, data: &Dataset, seed: u64) -> Result<ModelParams> {
        Ok(match self {
            ClassifierSpec::Lr(p) => ModelParams::Lr(train_lr(data, p)?),
            ClassifierSpec::Svm(p) => ModelParams::Svm(train_svm(data, p)?),
            ClassifierSpec::Tree(p) => ModelParams::Tree(train_tree(data, p)),
            ClassifierSpec::Forest(p) => ModelParams::Forest(train_forest(data, p, seed)),
            ClassifierSpec::Boost(p) => ModelParams::Boost(train_boost(data, p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Lr(LinearModel),
    Svm(LinearModel),
    Tree(Tree),
    Forest(ForestModel),
    Boost(BoostModel),
}

impl ModelParams {
    pub fn score_row(&self, x: &[f64]) -> f64 {
        match self {
            ModelParams::Lr(m) | ModelParams::Svm(m) => sigmoid(m.margin(x)),
            ModelParams::Tree(t) => t.predict_row(x),
            ModelParams::Forest(f) => f.predict_row(x),
            ModelParams::Boost(b) => b.predict_row(x),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Scores in `[0, 1]`, one per row.
pub fn predict(model: &ModelParams, data: &Dataset) -> Vec<f64> {
    data.rows().map(|x| model.score_row(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_modes() {
        assert_eq!(build_features(&[1.0, 2.0], &[1.0, 2.0], FeatureMode::Absdiff).unwrap(), [0.0, 0.0]);
        assert_eq!(
            build_features(&[1.0, 0.0], &[0.0, 1.0], FeatureMode::AbsdiffProd).unwrap(),
            [1.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(build_features(&[1.0, 2.0, 3.0], &[4.0], FeatureMode::Concat).unwrap().len(), 4);
        assert_eq!(
            build_features(&[1.0, -2.0], &[3.0, 4.0], FeatureMode::ConcatAbsdiffProd).unwrap(),
            [1.0, -2.0, 3.0, 4.0, 2.0, 6.0, 3.0, -8.0]
        );
        let err = build_features(&[1.0, 2.0], &[1.0], FeatureMode::Absdiff).unwrap_err();
        assert!(err.to_string().contains('2') && err.to_string().contains('1'));
        assert_eq!("absdiff_prod".parse::<FeatureMode>().unwrap(), FeatureMode::AbsdiffProd);
        assert!("bogus".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::from_rows(&[vec![1.0], vec![f64::NAN]], &[0, 1]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]], &[0, 1]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0]], &[2]).is_err());
        let d = Dataset::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0, 1]).unwrap();
        assert_eq!(d.value(1, 0), 3.0);
        assert_eq!(d.positives(), 1);
    }

    #[test]
    fn spec_json_defaults() {
        let s: ClassifierSpec = serde_json::from_str(r#"{"kind":"boost","rounds":5}"#).unwrap();
        match s {
            ClassifierSpec::Boost(p) => {
                assert_eq!(p.rounds, 5);
                assert_eq!(p.max_depth, 3);
            }
            _ => panic!(),
        }
        let s: ClassifierSpec = serde_json::from_str(r#"{"kind":"lr"}"#).unwrap();
        assert_eq!(s, ClassifierSpec::default_for(ClassifierKind::Lr));
    }
}
