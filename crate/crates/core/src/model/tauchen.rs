use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

/// AR(1) law `y' = μ + shift·a + ρ·y + σ·η`, `η ~ N(0, 1)`, to be discretized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ar1Spec {
    pub mu: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Intercept shift per unit of the conditioning (lagged) action.
    #[serde(default)]
    pub action_shift: f64,
    /// Number of conditioning actions `a = 0..n_actions`; 1 means no action dependence.
    #[serde(default = "one")]
    pub n_actions: usize,
    /// Grid size.
    pub n: usize,
    /// Half-width of the grid in long-run standard deviations.
    #[serde(default = "three")]
    pub n_sigma: f64,
}

fn one() -> usize {
    1
}

fn three() -> f64 {
    3.0
}

impl Ar1Spec {
    pub fn new(mu: f64, rho: f64, sigma: f64, n: usize) -> Self {
        Ar1Spec {
            mu,
            rho,
            sigma,
            action_shift: 0.0,
            n_actions: 1,
            n,
            n_sigma: 3.0,
        }
    }

    pub fn with_action_shift(mut self, shift: f64, n_actions: usize) -> Self {
        self.action_shift = shift;
        self.n_actions = n_actions;
        self
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.rho, self.sigma, self.action_shift, self.n_sigma]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidInput("AR(1) spec has non-finite fields".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidInput(format!("AR(1) persistence must satisfy |rho| < 1, got {}", self.rho)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidInput(format!("AR(1) innovation sd must be positive, got {}", self.sigma)));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("Tauchen grid needs at least 2 points, got {}", self.n)));
        }
        if self.n_actions == 0 || !(self.n_sigma > 0.0) {
            return Err(Error::InvalidInput("Tauchen n_actions and n_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Discretized AR(1): the grid and one transition matrix per conditioning action.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub grid: Vec<f64>,
    pub transitions: Vec<DenseMatrix>,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Tauchen's method. The grid is equally spaced over the long-run mean(s)
/// plus or minus `n_sigma` long-run standard deviations; with an action shift
/// the span covers the long-run means under every conditioning action.
pub fn tauchen_discretize(spec: &Ar1Spec) -> Result<MarkovChain> {
    spec.validate()?;
    let sd_lr = spec.sigma / (1.0 - spec.rho * spec.rho).sqrt();
    let means: Vec<f64> = (0..spec.n_actions)
        .map(|a| (spec.mu + spec.action_shift * a as f64) / (1.0 - spec.rho))
        .collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - spec.n_sigma * sd_lr;
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + spec.n_sigma * sd_lr;
    let n = spec.n;
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();

    let transitions = (0..spec.n_actions)
        .map(|a| {
            let shift = spec.mu + spec.action_shift * a as f64;
            DenseMatrix::from_fn(n, |i, j| {
                let mean = shift + spec.rho * grid[i];
                let upper = if j + 1 == n {
                    1.0
                } else {
                    normal_cdf((grid[j] + step / 2.0 - mean) / spec.sigma)
                };
                let lower = if j == 0 {
                    0.0
                } else {
                    normal_cdf((grid[j] - step / 2.0 - mean) / spec.sigma)
                };
                upper - lower
            })
        })
        .collect();
    Ok(MarkovChain { grid, transitions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iid_process_has_identical_rows() {
        let chain = tauchen_discretize(&Ar1Spec::new(0.0, 0.0, 1.0, 5)).unwrap();
        let f = &chain.transitions[0];
        for i in 1..5 {
            for j in 0..5 {
                assert!((f.get(i, j) - f.get(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        for spec in [
            Ar1Spec::new(0.2, 0.6, 1.0, 6),
            Ar1Spec::new(-1.0, 0.95, 0.3, 11),
            Ar1Spec::new(0.2, 0.6, 1.0, 3).with_action_shift(0.3, 2),
        ] {
            let chain = tauchen_discretize(&spec).unwrap();
            for f in &chain.transitions {
                for i in 0..spec.n {
                    let s: f64 = f.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_is_symmetric_around_long_run_mean() {
        let chain = tauchen_discretize(&Ar1Spec::new(0.2, 0.6, 1.0, 6)).unwrap();
        let sd = 1.0 / (1.0f64 - 0.36).sqrt();
        assert!((chain.grid[0] - (0.5 - 3.0 * sd)).abs() < 1e-12);
        assert!((chain.grid[5] - (0.5 + 3.0 * sd)).abs() < 1e-12);
    }

    #[test]
    fn action_shift_widens_grid_to_both_long_run_means() {
        let spec = Ar1Spec::new(0.2, 0.6, 1.0, 6).with_action_shift(0.3, 2);
        let chain = tauchen_discretize(&spec).unwrap();
        let sd = 1.0 / (1.0f64 - 0.36).sqrt();
        assert!((chain.grid[0] - (0.5 - 3.0 * sd)).abs() < 1e-12);
        assert!((chain.grid[5] - (1.25 + 3.0 * sd)).abs() < 1e-12);
        assert_eq!(chain.transitions.len(), 2);
        assert_ne!(chain.transitions[0], chain.transitions[1]);
    }

    #[test]
    fn simulated_chain_mean_matches_long_run_mean() {
        let chain = tauchen_discretize(&Ar1Spec::new(0.2, 0.6, 1.0, 6)).unwrap();
        let f = &chain.transitions[0];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut state = 2usize;
        let steps = 1_000_000;
        let mut total = 0.0;
        for _ in 0..steps {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = f.size() - 1;
            for (j, p) in f.row(state).iter().enumerate() {
                acc += p;
                if u < acc {
                    next = j;
                    break;
                }
            }
            state = next;
            total += chain.grid[state];
        }
        let mean = total / steps as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        assert!(tauchen_discretize(&Ar1Spec::new(0.0, 1.0, 1.0, 5)).is_err());
        assert!(tauchen_discretize(&Ar1Spec::new(0.0, 0.5, 0.0, 5)).is_err());
        assert!(tauchen_discretize(&Ar1Spec::new(0.0, 0.5, 1.0, 1)).is_err());
    }
}
