use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearParams {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self {
            lr: 0.1,
            epochs: 200,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub params: LinearParams,
}

impl LinearModel {
    pub fn zeros(d: usize, params: LinearParams) -> Self {
        Self {
            weights: vec![0.0; d],
            bias: 0.0,
            params,
        }
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn l2_penalty(w: &[f64], l2: f64) -> f64 {
    0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Mean cross-entropy plus `λ/2·‖w‖²` (bias unregularized).
pub fn logistic_objective(model: &LinearModel, data: &Dataset, l2: f64) -> f64 {
    let loss: f64 = data
        .rows()
        .zip(data.labels())
        .map(|(x, &y)| {
            let z = model.margin(x);
            // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y·z
            softplus(z) - f64::from(y) * z
        })
        .sum();
    loss / data.n() as f64 + l2_penalty(&model.weights, l2)
}

pub fn logistic_gradient(model: &LinearModel, data: &Dataset, l2: f64) -> (Vec<f64>, f64) {
    let n = data.n() as f64;
    let mut gw = vec![0.0; data.d()];
    let mut gb = 0.0;
    for (x, &y) in data.rows().zip(data.labels()) {
        let r = sigmoid(model.margin(x)) - f64::from(y);
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

/// Mean hinge loss on ±1 labels plus `λ/2·‖w‖²`.
pub fn hinge_objective(model: &LinearModel, data: &Dataset, l2: f64) -> f64 {
    let loss: f64 = data
        .rows()
        .zip(data.labels())
        .map(|(x, &y)| {
            let s = 2.0 * f64::from(y) - 1.0;
            (1.0 - s * model.margin(x)).max(0.0)
        })
        .sum();
    loss / data.n() as f64 + l2_penalty(&model.weights, l2)
}

/// A subgradient of [`hinge_objective`]; points exactly on the hinge
/// contribute zero.
pub fn hinge_subgradient(model: &LinearModel, data: &Dataset, l2: f64) -> (Vec<f64>, f64) {
    let n = data.n() as f64;
    let mut gw = vec![0.0; data.d()];
    let mut gb = 0.0;
    for (x, &y) in data.rows().zip(data.labels()) {
        let s = 2.0 * f64::from(y) - 1.0;
        if s * model.margin(x) < 1.0 {
            for (g, v) in gw.iter_mut().zip(x) {
                *g -= s * v;
            }
            gb -= s;
        }
    }
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    (gw, gb / n)
}

fn descend(
    data: &Dataset,
    params: &LinearParams,
    grad: fn(&LinearModel, &Dataset, f64) -> (Vec<f64>, f64),
) -> LinearModel {
    let mut model = LinearModel::zeros(data.d(), params.clone());
    for _ in 0..params.epochs {
        let (gw, gb) = grad(&model, data, params.l2);
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= params.lr * g;
        }
        model.bias -= params.lr * gb;
    }
    model
}

/// Full-batch gradient descent from zero weights.
pub fn train_lr(data: &Dataset, params: &LinearParams) -> Result<LinearModel> {
    data.require_both_classes()?;
    Ok(descend(data, params, logistic_gradient))
}

/// Linear SVM by full-batch subgradient descent; scores are `σ(margin)`.
pub fn train_svm(data: &Dataset, params: &LinearParams) -> Result<LinearModel> {
    data.require_both_classes()?;
    Ok(descend(data, params, hinge_subgradient))
}
