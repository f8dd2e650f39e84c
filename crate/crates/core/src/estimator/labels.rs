use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Label permutation aligning estimated types with true types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatch {
    /// `permutation[m]` is the estimated type matched to true type `m`.
    pub permutation: Vec<usize>,
    /// `Σ_m ‖θ̂_σ(m) − θ*_m‖² + ‖π̂_σ − π*‖²` at the best permutation.
    pub mse: f64,
}

/// Largest type count accepted by the exhaustive search.
pub const MAX_MATCH_TYPES: usize = 8;

fn squared_error(theta_hat: &[Vec<f64>], pi_hat: &[f64], theta_true: &[Vec<f64>], pi_true: &[f64], perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(m, &s)| {
            let t: f64 = theta_hat[s].iter().zip(&theta_true[m]).map(|(a, b)| (a - b).powi(2)).sum();
            t + (pi_hat[s] - pi_true[m]).powi(2)
        })
        .sum()
}

/// Visits every permutation of `0..n` in lexicographic order.
pub(crate) fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        visit(&perm);
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap_or(i);
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Exhaustive search for the type relabeling that minimizes the squared error.
/// Ties keep the lexicographically first permutation.
pub fn match_labels(theta_hat: &[Vec<f64>], pi_hat: &[f64], theta_true: &[Vec<f64>], pi_true: &[f64]) -> Result<LabelMatch> {
    let m = theta_true.len();
    if m == 0 || m > MAX_MATCH_TYPES {
        return Err(Error::InvalidInput(format!("label matching supports 1..={MAX_MATCH_TYPES} types, got {m}")));
    }
    if theta_hat.len() != m || pi_hat.len() != m || pi_true.len() != m {
        return Err(Error::dims("type count", m, theta_hat.len().min(pi_hat.len()).min(pi_true.len())));
    }
    for (h, t) in theta_hat.iter().zip(theta_true) {
        if h.len() != t.len() {
            return Err(Error::dims("θ", t.len(), h.len()));
        }
    }
    let mut best = LabelMatch {
        permutation: (0..m).collect(),
        mse: f64::INFINITY,
    };
    for_each_permutation(m, |perm| {
        let e = squared_error(theta_hat, pi_hat, theta_true, pi_true, perm);
        if e < best.mse {
            best.mse = e;
            best.permutation.copy_from_slice(perm);
        }
    });
    Ok(best)
}

/// Applies a permutation from [`match_labels`] to per-type values.
pub fn permute<T: Clone>(values: &[T], permutation: &[usize]) -> Vec<T> {
    permutation.iter().map(|&s| values[s].clone()).collect()
}
