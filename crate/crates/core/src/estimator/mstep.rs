use crate::logit::{fit_logit, LogitCells, LogitFit, LogitOptions};
use crate::model::{logit_ccp_into, social_surplus, CcpProfile, MixtureDdcModel};
use crate::{Error, Result};

/// Conditional values that are affine in θ, `v_j(x,a) = z_j(x,a)'θ + λ_j(x,a)`,
/// for every `(firm, state, action)`.
#[derive(Debug, Clone)]
pub struct LogitDesign {
    n_firms: usize,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    features: Vec<f64>,
    offsets: Vec<f64>,
}

impl LogitDesign {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `z` of one `(firm, state, action)` cell.
    pub fn features(&self, cell: usize) -> &[f64] {
        &self.features[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn offset(&self, cell: usize) -> f64 {
        self.offsets[cell]
    }

    pub fn values(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.offsets.len())
            .map(|c| self.offsets[c] + self.features(c).iter().zip(theta).map(|(z, t)| z * t).sum::<f64>())
            .collect()
    }

    pub fn ccp(&self, theta: &[f64]) -> CcpProfile {
        CcpProfile::from_values(self.n_firms, self.n_states, self.n_actions, &self.values(theta))
    }

    /// Logit cells of all `(firm, state)` pairs with positive weighted counts.
    /// Features and offsets are centered across actions within each cell,
    /// which leaves the likelihood unchanged and removes the large common
    /// component that policy valuation carries when `β` is close to one.
    pub fn cells(&self, counts: &[f64]) -> LogitCells {
        let (na, d) = (self.n_actions, self.dim);
        let mut cells = LogitCells::new(na, d);
        let mut z = vec![0.0; na * d];
        let mut off = vec![0.0; na];
        for (s, n) in counts.chunks_exact(na).enumerate() {
            if n.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let zs = &self.features[s * na * d..(s + 1) * na * d];
            let os = &self.offsets[s * na..(s + 1) * na];
            for k in 0..d {
                let mean = (0..na).map(|a| zs[a * d + k]).sum::<f64>() / na as f64;
                for a in 0..na {
                    z[a * d + k] = zs[a * d + k] - mean;
                }
            }
            let mean = os.iter().sum::<f64>() / na as f64;
            for (o, v) in off.iter_mut().zip(os) {
                *o = v - mean;
            }
            cells.push(&z, &off, n);
        }
        cells
    }
}

/// Policy-valuation design: `z = φ̄ + β F_j·W_ℓ` and `λ = β F_j·W_P`, with
/// rivals integrated out under `ccp`. `w[j]` holds firm `j`'s `d_θ + 1` components.
pub fn pv_design(model: &MixtureDdcModel, ccp: &CcpProfile, w: &[Vec<Vec<f64>>]) -> LogitDesign {
    let (nj, nx, na, d) = (model.n_firms(), model.n_states(), model.n_actions(), model.n_params());
    let beta = model.beta();
    let mut features = vec![0.0; nj * nx * na * d];
    let mut offsets = vec![0.0; nj * nx * na];
    for j in 0..nj {
        let re = model.rival_expectation(j, ccp);
        let block = nx * na;
        features[j * block * d..(j + 1) * block * d].copy_from_slice(re.basis());
        for (l, wl) in w[j].iter().enumerate() {
            let fw = re.transition_apply(wl);
            for (i, f) in fw.iter().enumerate() {
                if l < d {
                    features[(j * block + i) * d + l] += beta * f;
                } else {
                    offsets[j * block + i] = beta * f;
                }
            }
        }
    }
    LogitDesign {
        n_firms: nj,
        n_states: nx,
        n_actions: na,
        dim: d,
        features,
        offsets,
    }
}

/// Separable EPL design: `v(θ) = ṽ − Y_0 + Σ_ℓ θ_ℓ Y_ℓ`.
pub fn epl_design(model: &MixtureDdcModel, v_tilde: &[f64], y: &[Vec<f64>]) -> LogitDesign {
    let (nj, nx, na, d) = (model.n_firms(), model.n_states(), model.n_actions(), model.n_params());
    let n = nj * nx * na;
    let mut features = vec![0.0; n * d];
    for (l, yl) in y[1..].iter().enumerate() {
        for (c, v) in yl.iter().enumerate() {
            features[c * d + l] = *v;
        }
    }
    let offsets = v_tilde.iter().zip(&y[0]).map(|(a, b)| a - b).collect();
    LogitDesign {
        n_firms: nj,
        n_states: nx,
        n_actions: na,
        dim: d,
        features,
        offsets,
    }
}

/// Weighted pseudo-likelihood maximization for a θ-separable problem.
pub fn separable_m_step(design: &LogitDesign, counts: &[f64], theta0: &[f64], opts: &LogitOptions) -> Result<LogitFit> {
    fit_logit(&design.cells(counts), theta0, opts)
}

/// Normalized weighted log-likelihood of conditional values `v` (`[firm][state][action]`).
pub fn values_log_likelihood(v: &[f64], counts: &[f64], n_actions: usize) -> f64 {
    let mut ll = 0.0;
    let mut total = 0.0;
    for (vx, n) in v.chunks_exact(n_actions).zip(counts.chunks_exact(n_actions)) {
        let t: f64 = n.iter().sum();
        if t <= 0.0 {
            continue;
        }
        total += t;
        let s = social_surplus(vx);
        ll += n.iter().zip(vx).filter(|(k, _)| **k != 0.0).map(|(k, u)| k * (u - s)).sum::<f64>();
    }
    if total > 0.0 {
        ll / total
    } else {
        0.0
    }
}

/// Settings of the non-separable M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussNewtonOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step `h = rel_step · max(1, |θ_k|)`.
    pub rel_step: f64,
}

impl Default for GaussNewtonOptions {
    fn default() -> Self {
        GaussNewtonOptions {
            grad_tol: 1e-6,
            max_iter: 50,
            rel_step: 1e-4,
        }
    }
}

/// Outcome of a non-separable M-step.
#[derive(Debug, Clone)]
pub struct GaussNewtonFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Maximizes `θ ↦ Σ n log Λ(v(θ))` when `v(θ)` comes from a nested inner
/// solve. Each step linearizes `v` with a central finite-difference Jacobian,
/// takes the logit Newton (Fisher-scoring) step on the linearization and
/// backtracks on the true objective.
pub fn gauss_newton_m_step(
    eval: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    counts: &[f64],
    n_actions: usize,
    theta0: &[f64],
    opts: &GaussNewtonOptions,
) -> Result<GaussNewtonFit> {
    let d = theta0.len();
    let mut theta = theta0.to_vec();
    let mut v = eval(&theta)?;
    let mut evaluations = 1;
    let mut obj = values_log_likelihood(&v, counts, n_actions);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    let visited: Vec<usize> = counts
        .chunks_exact(n_actions)
        .enumerate()
        .filter(|(_, n)| n.iter().sum::<f64>() > 0.0)
        .map(|(s, _)| s)
        .collect();

    while iterations < opts.max_iter {
        let mut jac = vec![vec![0.0; v.len()]; d];
        for k in 0..d {
            let h = opts.rel_step * theta[k].abs().max(1.0);
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let vp = eval(&tp)?;
            let vm = eval(&tm)?;
            evaluations += 2;
            for (jk, (a, b)) in jac[k].iter_mut().zip(vp.iter().zip(&vm)) {
                *jk = (a - b) / (2.0 * h);
            }
        }
        let mut cells = LogitCells::new(n_actions, d);
        let mut z = vec![0.0; n_actions * d];
        let mut off = vec![0.0; n_actions];
        for &s in &visited {
            for a in 0..n_actions {
                let c = s * n_actions + a;
                let mut lin = v[c];
                for k in 0..d {
                    z[a * d + k] = jac[k][c];
                    lin -= jac[k][c] * theta[k];
                }
                off[a] = lin;
            }
            cells.push(&z, &off, &counts[s * n_actions..(s + 1) * n_actions]);
        }
        let total = cells.total_count();
        let (_, g, h) = cells.derivatives(&theta);
        let g = g / total;
        let info = -(h / total);
        grad_norm = g.amax();
        if grad_norm <= opts.grad_tol {
            break;
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                let mut damped = info.clone();
                let scale = (0..d).map(|k| info[(k, k)].abs()).fold(1e-12, f64::max);
                for k in 0..d {
                    damped[(k, k)] += 1e-6 * scale;
                }
                damped.cholesky().ok_or(Error::MStep { grad_norm })?.solve(&g)
            }
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        iterations += 1;
        while t > 1e-8 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let vt = eval(&trial);
            evaluations += 1;
            if let Ok(vt) = vt {
                let f = values_log_likelihood(&vt, counts, n_actions);
                if f.is_finite() && f >= obj + 1e-4 * t * slope {
                    theta = trial;
                    v = vt;
                    obj = f;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(GaussNewtonFit {
        theta,
        objective: obj,
        grad_norm,
        iterations,
        evaluations,
    })
}

/// Logit CCPs of conditional values laid out `[firm][state][action]`.
pub fn ccp_from_values(model: &MixtureDdcModel, v: &[f64]) -> CcpProfile {
    CcpProfile::from_values(model.n_firms(), model.n_states(), model.n_actions(), v)
}

/// In-place logit of stacked conditional values.
pub fn logit_rows(v: &[f64], n_actions: usize, out: &mut [f64]) {
    for (vx, o) in v.chunks_exact(n_actions).zip(out.chunks_exact_mut(n_actions)) {
        logit_ccp_into(vx, o);
    }
}
