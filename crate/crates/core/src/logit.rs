//! Weighted conditional logit on aggregated cells, fitted by damped Newton.
//!
//! A cell holds, for each action `a`, a feature vector `z_a`, an offset `λ_a`
//! and a (possibly fractional) count `n_a`. The objective is the count-weighted
//! log-likelihood `Σ_c Σ_a n_ca log Λ_a(z_c θ + λ_c)` divided by the total count,
//! minus an optional ridge `ρ/2 ‖θ‖²`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::sup_norm;
use crate::model::social_surplus;
use crate::{Error, Result};

/// Aggregated logit data.
#[derive(Debug, Clone, Default)]
pub struct LogitCells {
    n_actions: usize,
    dim: usize,
    features: Vec<f64>,
    offsets: Vec<f64>,
    counts: Vec<f64>,
}

impl LogitCells {
    pub fn new(n_actions: usize, dim: usize) -> Self {
        LogitCells {
            n_actions,
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.counts.len() / self.n_actions.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Adds a cell: `features` is `[action][dim]`, `offsets` and `counts` are per action.
    pub fn push(&mut self, features: &[f64], offsets: &[f64], counts: &[f64]) {
        debug_assert_eq!(features.len(), self.n_actions * self.dim);
        debug_assert_eq!(offsets.len(), self.n_actions);
        debug_assert_eq!(counts.len(), self.n_actions);
        self.features.extend_from_slice(features);
        self.offsets.extend_from_slice(offsets);
        self.counts.extend_from_slice(counts);
    }

    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn cell(&self, c: usize) -> (&[f64], &[f64], &[f64]) {
        let (na, d) = (self.n_actions, self.dim);
        (
            &self.features[c * na * d..(c + 1) * na * d],
            &self.offsets[c * na..(c + 1) * na],
            &self.counts[c * na..(c + 1) * na],
        )
    }

    fn utilities(&self, c: usize, theta: &[f64], out: &mut [f64]) {
        let (z, off, _) = self.cell(c);
        for (a, o) in out.iter_mut().enumerate() {
            *o = off[a] + z[a * self.dim..(a + 1) * self.dim].iter().zip(theta).map(|(x, t)| x * t).sum::<f64>();
        }
    }

    /// Unnormalized log-likelihood `Σ_c Σ_a n_ca log Λ_a`.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let mut u = vec![0.0; self.n_actions];
        let mut ll = 0.0;
        for c in 0..self.len() {
            let (_, _, n) = self.cell(c);
            self.utilities(c, theta, &mut u);
            let s = social_surplus(&u);
            ll += n.iter().zip(&u).filter(|(k, _)| **k != 0.0).map(|(k, ui)| k * (ui - s)).sum::<f64>();
        }
        ll
    }

    /// Unnormalized log-likelihood, gradient and Hessian.
    pub fn derivatives(&self, theta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (na, d) = (self.n_actions, self.dim);
        let mut u = vec![0.0; na];
        let mut p = vec![0.0; na];
        let mut zbar = vec![0.0; d];
        let mut ll = 0.0;
        let mut grad = DVector::zeros(d);
        let mut hess = DMatrix::zeros(d, d);
        for c in 0..self.len() {
            let (z, _, n) = self.cell(c);
            let total: f64 = n.iter().sum();
            if total == 0.0 {
                continue;
            }
            self.utilities(c, theta, &mut u);
            let s = social_surplus(&u);
            for a in 0..na {
                p[a] = (u[a] - s).exp();
                if n[a] != 0.0 {
                    ll += n[a] * (u[a] - s);
                }
            }
            zbar.iter_mut().for_each(|v| *v = 0.0);
            for a in 0..na {
                for (k, zb) in zbar.iter_mut().enumerate() {
                    *zb += p[a] * z[a * d + k];
                }
            }
            for a in 0..na {
                let za = &z[a * d..(a + 1) * d];
                let r = n[a] - total * p[a];
                for k in 0..d {
                    grad[k] += r * za[k];
                }
                let w = total * p[a];
                if w == 0.0 {
                    continue;
                }
                for k in 0..d {
                    let dk = za[k] - zbar[k];
                    if dk == 0.0 {
                        continue;
                    }
                    for l in 0..=k {
                        hess[(k, l)] -= w * dk * (za[l] - zbar[l]);
                    }
                }
            }
        }
        for k in 0..d {
            for l in 0..k {
                hess[(l, k)] = hess[(k, l)];
            }
        }
        (ll, grad, hess)
    }
}

/// Newton settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitOptions {
    /// Sup-norm tolerance on the normalized gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Ridge penalty `ρ` on the normalized objective.
    pub ridge: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions {
            grad_tol: 1e-8,
            max_iter: 50,
            ridge: 0.0,
        }
    }
}

/// Result of a logit fit. Objective, gradient and Hessian are normalized by the total count.
#[derive(Debug, Clone)]
pub struct LogitFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Negative Hessian of the normalized, penalized objective at `theta`.
    pub information: DMatrix<f64>,
}

fn penalized(cells: &LogitCells, theta: &[f64], scale: f64, ridge: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (ll, mut g, mut h) = cells.derivatives(theta);
    let mut obj = ll * scale;
    g *= scale;
    h *= scale;
    if ridge > 0.0 {
        for (k, t) in theta.iter().enumerate() {
            obj -= 0.5 * ridge * t * t;
            g[k] -= ridge * t;
            h[(k, k)] -= ridge;
        }
    }
    (obj, g, h)
}

fn objective_only(cells: &LogitCells, theta: &[f64], scale: f64, ridge: f64) -> f64 {
    let pen: f64 = theta.iter().map(|t| t * t).sum::<f64>() * 0.5 * ridge;
    cells.log_likelihood(theta) * scale - pen
}

// Solves `(H + μI) δ = g` for the positive semidefinite `H`, raising μ until
// a Cholesky factorization succeeds.
fn damped_newton_direction(info: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let d = g.len();
    let top = (0..d).map(|k| info[(k, k)].abs()).fold(0.0, f64::max).max(1e-300);
    let diag: Vec<f64> = (0..d).map(|k| info[(k, k)].abs().max(1e-12 * top)).collect();
    let mut mu = 0.0;
    for _ in 0..30 {
        let mut m = info.clone();
        for k in 0..d {
            m[(k, k)] += mu * diag[k];
        }
        if let Some(ch) = m.cholesky() {
            let step = ch.solve(g);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
        mu = if mu == 0.0 { 1e-10 } else { mu * 10.0 };
    }
    None
}

/// Gradient norm below which a fit that stalls (no Armijo progress or the
/// iteration cap) is still accepted.
pub const STALL_TOL: f64 = 1e-6;

/// Newton decrement `g'H⁻¹g`, relative to `1 + |objective|`, below which the
/// predicted gain is at the objective's rounding level. There, full Newton
/// steps are taken while they shrink the gradient, and the fit stops when
/// they no longer do.
pub const DECREMENT_TOL: f64 = 1e-13;

/// Maximizes the normalized weighted log-likelihood from `theta0`.
pub fn fit_logit(cells: &LogitCells, theta0: &[f64], opts: &LogitOptions) -> Result<LogitFit> {
    let d = cells.dim();
    if theta0.len() != d {
        return Err(Error::dims("logit start", d, theta0.len()));
    }
    let total = cells.total_count();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("logit fit needs positive total weight".into()));
    }
    let scale = 1.0 / total;
    let mut theta = theta0.to_vec();
    let (mut obj, mut g, mut h) = penalized(cells, &theta, scale, opts.ridge);
    let mut iterations = 0;
    loop {
        let grad_norm = g.amax();
        if grad_norm <= opts.grad_tol {
            break;
        }
        if iterations >= opts.max_iter {
            if grad_norm <= STALL_TOL {
                break;
            }
            return Err(Error::MStep { grad_norm });
        }
        let info = -&h;
        let Some(step) = damped_newton_direction(&info, &g) else {
            return Err(Error::MStep { grad_norm });
        };
        let slope = g.dot(&step);
        if slope <= DECREMENT_TOL * (1.0 + obj.abs()) {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
            let (f, g_new, h_new) = penalized(cells, &trial, scale, opts.ridge);
            iterations += 1;
            if f.is_finite() && g_new.amax() < grad_norm {
                (theta, obj, g, h) = (trial, f, g_new, h_new);
                continue;
            }
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let f = objective_only(cells, &trial, scale, opts.ridge);
            if f.is_finite() && f >= obj + 1e-4 * t * slope {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(trial) => {
                theta = trial;
                (obj, g, h) = penalized(cells, &theta, scale, opts.ridge);
            }
            None => {
                if grad_norm <= opts.grad_tol.max(STALL_TOL) {
                    break;
                }
                return Err(Error::MStep { grad_norm });
            }
        }
    }
    Ok(LogitFit {
        grad_norm: g.amax(),
        theta,
        objective: obj,
        iterations,
        information: -h,
    })
}

/// Sup-norm of the normalized gradient at `theta`, without the ridge.
pub fn gradient_norm(cells: &LogitCells, theta: &[f64]) -> f64 {
    let (_, g, _) = cells.derivatives(theta);
    sup_norm(g.as_slice()) / cells.total_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_cells(xs: &[f64], ones: &[f64], zeros: &[f64]) -> LogitCells {
        let mut cells = LogitCells::new(2, 2);
        for ((x, n1), n0) in xs.iter().zip(ones).zip(zeros) {
            cells.push(&[0.0, 0.0, 1.0, *x], &[0.0, 0.0], &[*n0, *n1]);
        }
        cells
    }

    #[test]
    fn saturated_binary_logit_matches_log_odds() {
        // Two cells, two parameters: MLE reproduces the empirical log-odds exactly.
        let cells = binary_cells(&[0.0, 1.0], &[30.0, 10.0], &[10.0, 30.0]);
        let fit = fit_logit(&cells, &[0.0, 0.0], &LogitOptions::default()).unwrap();
        let a = (30.0f64 / 10.0).ln();
        let b = (10.0f64 / 30.0).ln() - a;
        assert!((fit.theta[0] - a).abs() < 1e-8);
        assert!((fit.theta[1] - b).abs() < 1e-8);
        assert!(fit.grad_norm <= 1e-8);
    }

    #[test]
    fn matches_grid_search_oracle() {
        let cells = binary_cells(&[-1.0, 0.0, 0.5, 2.0], &[3.0, 5.0, 9.0, 14.0], &[12.0, 8.0, 6.0, 2.0]);
        let fit = fit_logit(&cells, &[0.0, 0.0], &LogitOptions::default()).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let mut a = fit.theta[0] - 0.05;
        while a <= fit.theta[0] + 0.05 {
            let mut b = fit.theta[1] - 0.05;
            while b <= fit.theta[1] + 0.05 {
                let ll = cells.log_likelihood(&[a, b]);
                if ll > best.0 {
                    best = (ll, a, b);
                }
                b += 1e-3;
            }
            a += 1e-3;
        }
        assert!((best.1 - fit.theta[0]).abs() <= 1e-3);
        assert!((best.2 - fit.theta[1]).abs() <= 1e-3);
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let mut cells = LogitCells::new(3, 2);
        cells.push(&[0.0, 0.0, 1.0, 0.5, -0.3, 2.0], &[0.1, 0.0, -0.2], &[2.0, 1.5, 0.5]);
        cells.push(&[0.0, 1.0, 0.7, -1.0, 0.2, 0.1], &[0.0, 0.3, 0.0], &[0.0, 3.0, 1.0]);
        let theta = [0.3, -0.4];
        let (_, g, h) = cells.derivatives(&theta);
        let eps = 1e-6;
        for k in 0..2 {
            let mut tp = theta;
            let mut tm = theta;
            tp[k] += eps;
            tm[k] -= eps;
            let fd_g = (cells.log_likelihood(&tp) - cells.log_likelihood(&tm)) / (2.0 * eps);
            assert!((fd_g - g[k]).abs() < 1e-6);
            let (_, gp, _) = cells.derivatives(&tp);
            let (_, gm, _) = cells.derivatives(&tm);
            for l in 0..2 {
                assert!(((gp[l] - gm[l]) / (2.0 * eps) - h[(l, k)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn ridge_keeps_separated_data_finite() {
        let cells = binary_cells(&[0.0, 1.0], &[0.0, 10.0], &[10.0, 0.0]);
        let opts = LogitOptions {
            ridge: 1e-3,
            max_iter: 100,
            ..Default::default()
        };
        let fit = fit_logit(&cells, &[0.0, 0.0], &opts).unwrap();
        assert!(fit.theta.iter().all(|t| t.is_finite()));
    }
}
