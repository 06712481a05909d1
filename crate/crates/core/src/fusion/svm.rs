//! One-vs-rest linear max-margin classifier, the image-only baseline.
//!
//! Each binary problem minimizes
//! `λ/2 · ‖w‖² + 1/n · Σ max(0, 1 − yᵢ(w·xᵢ + b))` with `λ = 1/(C·n)`
//! (the bias is not regularized) by full-batch subgradient descent with step
//! `1/(λ·(t + t₀))`. The returned classifier is the running average of the
//! iterates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::dot;
use crate::{Error, Result, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyper {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            c: 1.0,
            epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective of the averaged iterate after each epoch.
    pub objective_trace: Vec<f64>,
}

impl BinarySvm {
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// Roles seen in training; one binary classifier each.
    pub classes: Vec<Role>,
    pub classifiers: Vec<BinarySvm>,
}

impl LinearSvm {
    pub fn margins(&self, x: &[f64]) -> Vec<(Role, f64)> {
        self.classes
            .iter()
            .zip(&self.classifiers)
            .map(|(&r, c)| (r, c.margin(x)))
            .collect()
    }

    /// Role with the largest margin; ties go to the earlier role.
    pub fn predict(&self, x: &[f64]) -> Role {
        let mut best: Option<(Role, f64)> = None;
        for (r, m) in self.margins(x) {
            if best.is_none_or(|(_, bm)| m > bm) {
                best = Some((r, m));
            }
        }
        best.expect("at least two classes").0
    }
}

/// `λ/2 · ‖w‖² + mean hinge loss`.
pub fn hinge_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot(w, w) + hinge / xs.len() as f64
}

fn train_binary(xs: &[Vec<f64>], ys: &[f64], lambda: f64, epochs: usize, rng: &mut ChaCha8Rng) -> BinarySvm {
    let n = xs.len() as f64;
    let dim = xs[0].len();
    let mut w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    let mut b = 0.0;
    let mut avg_w = w.clone();
    let mut avg_b = b;
    let t0 = 1.0;
    let mut trace = Vec::with_capacity(epochs);
    for t in 1..=epochs {
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            if y * (dot(&w, x) + b) < 1.0 {
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi / n;
                }
                gb -= y / n;
            }
        }
        let step = 1.0 / (lambda * (t as f64 + t0));
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * g;
        }
        b -= step * gb;
        let k = t as f64;
        for (a, wi) in avg_w.iter_mut().zip(&w) {
            *a += (wi - *a) / k;
        }
        avg_b += (b - avg_b) / k;
        trace.push(hinge_objective(&avg_w, avg_b, xs, ys, lambda));
    }
    BinarySvm {
        weights: avg_w,
        bias: avg_b,
        objective_trace: trace,
    }
}

/// Trains one binary classifier per role present in `labels`.
pub fn train_linear_svm(features: &[Vec<f64>], labels: &[Role], hyper: SvmHyper) -> Result<LinearSvm> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} feature vectors for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|x| x.len() != dim) {
        return Err(Error::Shape("feature vectors must share a positive dimension".into()));
    }
    if !(hyper.c > 0.0 && hyper.c.is_finite()) || hyper.epochs == 0 {
        return Err(Error::Invalid("C must be positive and epochs at least 1".into()));
    }
    let mut classes: Vec<Role> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least two classes, found only {}",
            classes.first().map_or("none".to_string(), |r| r.to_string())
        )));
    }
    let lambda = 1.0 / (hyper.c * features.len() as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let classifiers = classes
        .iter()
        .map(|&c| {
            let ys: Vec<f64> = labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            train_binary(features, &ys, lambda, hyper.epochs, &mut rng)
        })
        .collect();
    Ok(LinearSvm { classes, classifiers })
}
