//! Multinomial logistic regression by full-batch gradient descent.
//!
//! Written from scratch with pinned hyperparameters so that runs are exactly
//! reproducible across implementations: features are standardized to zero
//! mean and unit (population) variance, weights start at zero, and the step
//! size is fixed at `1 / (0.5 * (1 + sum of standardized column mean
//! squares) + l2)`, a bound on the Lipschitz constant of the regularized
//! softmax loss, which makes every iteration a descent step.

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::model::Matrix;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogisticHyper {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper { l2: 1e-4, max_iter: 2000, tol: 1e-7 }
    }
}

/// Fitted multinomial model. Weights are per class over standardized
/// features; the standardization transform is stored in the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub class_labels: Vec<String>,
    /// classes x features, over standardized inputs.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
}

fn standardize(x: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.rows as f64;
    let mut means = vec![0.0; x.cols];
    for r in 0..x.rows {
        for (c, mean) in means.iter_mut().enumerate() {
            *mean += x.at(r, c);
        }
    }
    for mean in &mut means {
        *mean /= n;
    }
    let mut scales = vec![0.0; x.cols];
    for r in 0..x.rows {
        for (c, scale) in scales.iter_mut().enumerate() {
            let d = x.at(r, c) - means[c];
            *scale += d * d;
        }
    }
    for scale in &mut scales {
        *scale = (*scale / n).sqrt();
        if *scale == 0.0 {
            *scale = 1.0;
        }
    }
    let mut data = vec![0.0; x.rows * x.cols];
    for r in 0..x.rows {
        for c in 0..x.cols {
            data[r * x.cols + c] = (x.at(r, c) - means[c]) / scales[c];
        }
    }
    (means, scales, data)
}

fn softmax_row(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

struct Fit<'a> {
    z: &'a [f64],
    rows: usize,
    cols: usize,
    y: &'a [usize],
    k: usize,
    l2: f64,
}

impl Fit<'_> {
    /// Mean cross-entropy plus the L2 penalty (intercepts unregularized),
    /// and the gradient, evaluated together.
    fn loss_grad(&self, w: &[Vec<f64>], b: &[f64]) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        let n = self.rows as f64;
        let mut loss = 0.0;
        let mut gw = vec![vec![0.0; self.cols]; self.k];
        let mut gb = vec![0.0; self.k];
        let mut probs = vec![0.0; self.k];
        for r in 0..self.rows {
            let row = &self.z[r * self.cols..(r + 1) * self.cols];
            for k in 0..self.k {
                probs[k] = b[k] + row.iter().zip(&w[k]).map(|(x, wi)| x * wi).sum::<f64>();
            }
            softmax_row(&mut probs);
            loss -= probs[self.y[r]].max(1e-300).ln();
            for k in 0..self.k {
                let err = probs[k] - if k == self.y[r] { 1.0 } else { 0.0 };
                gb[k] += err;
                for c in 0..self.cols {
                    gw[k][c] += err * row[c];
                }
            }
        }
        loss /= n;
        for k in 0..self.k {
            gb[k] /= n;
            for c in 0..self.cols {
                gw[k][c] = gw[k][c] / n + self.l2 * w[k][c];
                loss += 0.5 * self.l2 * w[k][c] * w[k][c];
            }
        }
        (loss, gw, gb)
    }
}

/// Fits the model. Iterates until the loss improvement drops below `tol` or
/// `max_iter` is reached. Errors with `SingleClass` when labels are uniform.
pub fn logistic_fit(x: &Matrix, labels: &[String], hyper: LogisticHyper) -> Result<LogisticModel, StatsError> {
    if x.rows != labels.len() {
        return Err(StatsError::LengthMismatch { left: x.rows, right: labels.len() });
    }
    if x.rows == 0 {
        return Err(StatsError::LengthMismatch { left: 0, right: 0 });
    }
    let mut class_labels: Vec<String> = labels.to_vec();
    class_labels.sort();
    class_labels.dedup();
    if class_labels.len() < 2 {
        return Err(StatsError::SingleClass);
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| class_labels.binary_search(l).expect("label present by construction"))
        .collect();

    let (means, scales, z) = standardize(x);
    let k = class_labels.len();
    let fit = Fit { z: &z, rows: x.rows, cols: x.cols, y: &y, k, l2: hyper.l2 };

    // Standardized columns have mean square 1, so trace(Z'Z)/n = cols and
    // the softmax-loss curvature is bounded by 0.5*(1 + cols) + l2.
    let mean_sq: f64 = if x.rows == 0 {
        0.0
    } else {
        (0..x.cols)
            .map(|c| (0..x.rows).map(|r| z[r * x.cols + c].powi(2)).sum::<f64>() / x.rows as f64)
            .sum()
    };
    let step = 1.0 / (0.5 * (1.0 + mean_sq) + hyper.l2);

    let mut w = vec![vec![0.0; x.cols]; k];
    let mut b = vec![0.0; k];
    let (mut loss, mut gw, mut gb) = fit.loss_grad(&w, &b);
    for _ in 0..hyper.max_iter {
        for kk in 0..k {
            b[kk] -= step * gb[kk];
            for c in 0..x.cols {
                w[kk][c] -= step * gw[kk][c];
            }
        }
        let (next_loss, next_gw, next_gb) = fit.loss_grad(&w, &b);
        let improvement = loss - next_loss;
        loss = next_loss;
        gw = next_gw;
        gb = next_gb;
        if improvement >= 0.0 && improvement < hyper.tol {
            break;
        }
    }

    Ok(LogisticModel { class_labels, weights: w, intercepts: b, feature_means: means, feature_scales: scales })
}

/// Class probabilities per row; rows sum to 1.
pub fn logistic_proba(model: &LogisticModel, x: &Matrix) -> Vec<Vec<f64>> {
    assert_eq!(x.cols, model.feature_means.len(), "feature count must match the fitted model");
    let k = model.class_labels.len();
    (0..x.rows)
        .map(|r| {
            let mut probs: Vec<f64> = (0..k)
                .map(|kk| {
                    model.intercepts[kk]
                        + (0..x.cols)
                            .map(|c| {
                                (x.at(r, c) - model.feature_means[c]) / model.feature_scales[c]
                                    * model.weights[kk][c]
                            })
                            .sum::<f64>()
                })
                .collect();
            softmax_row(&mut probs);
            probs
        })
        .collect()
}

/// Predicted labels: argmax probability, first class winning ties.
pub fn logistic_predict(model: &LogisticModel, x: &Matrix) -> Vec<String> {
    logistic_proba(model, x)
        .into_iter()
        .map(|probs| {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            model.class_labels[best].clone()
        })
        .collect()
}
