//! Linear max-margin classifier trained with Pegasos-style stochastic
//! subgradient descent on the hinge loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearSvm {
    /// Signed decision score; positive = card.
    pub fn score(&self, x: &[f32]) -> f64 {
        debug_assert_eq!(x.len(), self.w.len());
        let mut s = self.b;
        for (wi, &xi) in self.w.iter().zip(x.iter()) {
            s += wi * xi as f64;
        }
        s
    }
}

/// Trains a linear SVM on (feature, is_card) pairs.
///
/// Deterministic: sampling runs on a fixed-seed stream. Errors when only one
/// label is present or feature lengths disagree.
pub fn train_svm(features: &[Vec<f32>], labels: &[bool]) -> Result<LinearSvm> {
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} features vs {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n = features.len();
    if n == 0 || !labels.contains(&true) || !labels.contains(&false) {
        return Err(Error::SingleClass);
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch("non-uniform feature length".into()));
    }
    let lambda = 1e-4;
    let iters = (60_000usize).max(40 * n);
    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0x53564d5f54524e); // "SVM_TRN"
    for t in 1..=iters {
        let i = rng.random_range(0..n);
        let y = if labels[i] { 1.0 } else { -1.0 };
        let eta = 1.0 / (lambda * t as f64);
        let margin = y * {
            let mut s = b;
            for (wi, &xi) in w.iter().zip(features[i].iter()) {
                s += wi * xi as f64;
            }
            s
        };
        // w <- (1 - eta*lambda) w  [+ eta*y*x if hinge active]
        let shrink = 1.0 - eta * lambda;
        for wi in w.iter_mut() {
            *wi *= shrink;
        }
        if margin < 1.0 {
            let step = eta * y;
            for (wi, &xi) in w.iter_mut().zip(features[i].iter()) {
                *wi += step * xi as f64;
            }
            b += 0.1 * step; // unregularized intercept, damped
        }
    }
    Ok(LinearSvm { w, b, lambda })
}

/// Fraction of training points classified correctly.
pub fn training_accuracy(svm: &LinearSvm, features: &[Vec<f32>], labels: &[bool]) -> f64 {
    let mut ok = 0usize;
    for (f, &l) in features.iter().zip(labels.iter()) {
        if (svm.score(f) > 0.0) == l {
            ok += 1;
        }
    }
    ok as f64 / features.len() as f64
}
