use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::data::PanelCounts;
use super::mstep::{epl_design, pv_design, LogitDesign};
use super::run::EstimationResult;
use crate::maps::{make_gamma, w_rhs, EplLinearization, InnerAlgorithm, Mapping, PolicyOperator, Truncation};
use crate::model::{CcpProfile, MixtureDdcModel};
use crate::{Error, Result};

/// Covariance of `(θ_1, …, θ_M, π_1, …, π_{M−1})` from the inverse Hessian of
/// the mixture log pseudo-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub names: Vec<String>,
    /// Row-major `dim × dim`.
    pub matrix: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Largest entry of `|H_analytic − H_fd|` relative to `max(1, max|H|)`.
    pub fd_discrepancy: f64,
}

impl Covariance {
    pub fn dim(&self) -> usize {
        self.std_errors.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.dim() + j]
    }
}

// Per-type logit quantities at one θ over all (firm, state) cells.
struct TypeTerms {
    log_p: Vec<f64>,
    /// `Σ_a Λ_a z_a` per (firm, state).
    z_bar: Vec<f64>,
    /// `Σ_a Λ_a z_a z_a' − z̄ z̄'` per (firm, state), only when requested.
    var: Vec<DMatrix<f64>>,
}

fn type_terms(design: &LogitDesign, theta: &[f64], n_actions: usize, with_var: bool) -> TypeTerms {
    let d = design.dim();
    let v = design.values(theta);
    let n_slices = v.len() / n_actions;
    let mut log_p = vec![0.0; v.len()];
    let mut z_bar = vec![0.0; n_slices * d];
    let mut var = Vec::with_capacity(if with_var { n_slices } else { 0 });
    for s in 0..n_slices {
        let vs = &v[s * n_actions..(s + 1) * n_actions];
        let lse = crate::model::social_surplus(vs);
        let zb = &mut z_bar[s * d..(s + 1) * d];
        let mut second = DMatrix::zeros(d, d);
        for a in 0..n_actions {
            let c = s * n_actions + a;
            log_p[c] = vs[a] - lse;
            let p = log_p[c].exp();
            let z = design.features(c);
            for k in 0..d {
                zb[k] += p * z[k];
            }
            if with_var {
                for k in 0..d {
                    for l in 0..d {
                        second[(k, l)] += p * z[k] * z[l];
                    }
                }
            }
        }
        if with_var {
            for k in 0..d {
                for l in 0..d {
                    second[(k, l)] -= zb[k] * zb[l];
                }
            }
            var.push(second);
        }
    }
    TypeTerms { log_p, z_bar, var }
}

fn unpack(params: &[f64], n_types: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let theta = (0..n_types).map(|m| params[m * d..(m + 1) * d].to_vec()).collect();
    let mut pi: Vec<f64> = params[n_types * d..].to_vec();
    pi.push(1.0 - pi.iter().sum::<f64>());
    (theta, pi)
}

/// Packs `(θ_1, …, θ_M, π_1, …, π_{M−1})`.
pub fn pack_params(theta: &[Vec<f64>], pi: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = theta.concat();
    out.extend_from_slice(&pi[..pi.len() - 1]);
    out
}

fn mixture_derivatives(
    designs: &[LogitDesign],
    counts: &PanelCounts,
    params: &[f64],
    n_actions: usize,
    with_hessian: bool,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let n_types = designs.len();
    if n_types == 0 {
        return Err(Error::InvalidInput("no types".into()));
    }
    let d = designs[0].dim();
    let dim = n_types * d + n_types - 1;
    if params.len() != dim {
        return Err(Error::dims("packed parameters", dim, params.len()));
    }
    let (theta, pi) = unpack(params, n_types, d);
    if pi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidInput(format!("mixing weights must be interior, got {pi:?}")));
    }
    let terms: Vec<TypeTerms> = designs
        .iter()
        .zip(&theta)
        .map(|(ds, t)| type_terms(ds, t, n_actions, with_hessian))
        .collect();

    let mut ll = 0.0;
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    let mut a = vec![0.0; n_types];
    let mut score: Vec<DVector<f64>> = vec![DVector::zeros(dim); n_types];
    let mut local_h: Vec<DMatrix<f64>> = if with_hessian {
        vec![DMatrix::zeros(d, d); n_types]
    } else {
        Vec::new()
    };
    for i in 0..counts.n_markets() {
        let cells = counts.market(i);
        for m in 0..n_types {
            let tm = &terms[m];
            let sc = &mut score[m];
            sc.fill(0.0);
            let mut lm = 0.0;
            for &(c, n) in cells {
                let s = c / n_actions;
                lm += n * tm.log_p[c];
                let z = designs[m].features(c);
                for k in 0..d {
                    sc[m * d + k] += n * (z[k] - tm.z_bar[s * d + k]);
                }
            }
            if with_hessian {
                let h = &mut local_h[m];
                h.fill(0.0);
                let mut idx = 0;
                while idx < cells.len() {
                    let s = cells[idx].0 / n_actions;
                    let mut n_s = 0.0;
                    while idx < cells.len() && cells[idx].0 / n_actions == s {
                        n_s += cells[idx].1;
                        idx += 1;
                    }
                    *h -= &tm.var[s] * n_s;
                }
            }
            if m + 1 < n_types {
                sc[n_types * d + m] += 1.0 / pi[m];
            } else {
                for k in 0..n_types - 1 {
                    sc[n_types * d + k] -= 1.0 / pi[m];
                }
            }
            a[m] = pi[m].ln() + lm;
        }
        let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = a.iter().map(|x| (x - amax).exp()).sum();
        ll += amax + sum.ln();
        let w: Vec<f64> = a.iter().map(|x| (x - amax).exp() / sum).collect();
        let mut g_i = DVector::zeros(dim);
        for m in 0..n_types {
            g_i.axpy(w[m], &score[m], 1.0);
        }
        grad += &g_i;
        if with_hessian {
            for m in 0..n_types {
                let mut block = hess.view_mut((m * d, m * d), (d, d));
                block += &local_h[m] * w[m];
                if m + 1 < n_types {
                    let k = n_types * d + m;
                    hess[(k, k)] -= w[m] / (pi[m] * pi[m]);
                } else {
                    let c = w[m] / (pi[m] * pi[m]);
                    for k in 0..n_types - 1 {
                        for l in 0..n_types - 1 {
                            hess[(n_types * d + k, n_types * d + l)] -= c;
                        }
                    }
                }
                hess.ger(w[m], &score[m], &score[m], 1.0);
            }
            hess.ger(-1.0, &g_i, &g_i, 1.0);
        }
    }
    Ok((ll, grad, hess))
}

/// Log-likelihood and analytic score of the mixture pseudo-likelihood at
/// packed parameters, with each type's CCPs given by a logit design.
pub fn mixture_gradient(
    designs: &[LogitDesign],
    counts: &PanelCounts,
    params: &[f64],
    n_actions: usize,
) -> Result<(f64, Vec<f64>)> {
    let (ll, g, _) = mixture_derivatives(designs, counts, params, n_actions, false)?;
    Ok((ll, g.as_slice().to_vec()))
}

/// Analytic Hessian of the mixture log pseudo-likelihood.
pub fn mixture_hessian(
    designs: &[LogitDesign],
    counts: &PanelCounts,
    params: &[f64],
    n_actions: usize,
) -> Result<DMatrix<f64>> {
    Ok(mixture_derivatives(designs, counts, params, n_actions, true)?.2)
}

/// Central finite differences of the analytic score.
pub fn mixture_hessian_fd(
    designs: &[LogitDesign],
    counts: &PanelCounts,
    params: &[f64],
    n_actions: usize,
    step: f64,
) -> Result<DMatrix<f64>> {
    let dim = params.len();
    let mut h = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let e = step * params[k].abs().max(1.0);
        let mut p = params.to_vec();
        p[k] += e;
        let gp = mixture_gradient(designs, counts, &p, n_actions)?.1;
        p[k] -= 2.0 * e;
        let gm = mixture_gradient(designs, counts, &p, n_actions)?.1;
        for r in 0..dim {
            h[(r, k)] = (gp[r] - gm[r]) / (2.0 * e);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Logit design whose CCPs define the pseudo-likelihood of one type at the
/// estimate: policy valuation at `P̂`, or the EPL linearization at `(θ̂, v(θ̂, P̂))`.
pub fn linear_design(model: &MixtureDdcModel, mapping: Mapping, theta: &[f64], ccp: &CcpProfile) -> Result<LogitDesign> {
    if !model.linear_utility() {
        return Err(Error::Config("standard errors need utility that is linear in parameters".into()));
    }
    let gamma = make_gamma(InnerAlgorithm::Gmres, Truncation::Converge).with_tol(1e-12);
    let op = PolicyOperator::new(model, ccp);
    let nx = model.n_states();
    let mut w = Vec::with_capacity(model.n_firms());
    for j in 0..model.n_firms() {
        let rhs = w_rhs(model, j, ccp, op.weights());
        let zeros = vec![vec![0.0; nx]; rhs.len()];
        w.push(gamma.solve_linear_many(&op, &rhs, &zeros)?.0);
    }
    let pv = pv_design(model, ccp, &w);
    if mapping != Mapping::Epl {
        return Ok(pv);
    }
    let v = pv.values(theta);
    let lin = EplLinearization::new(model, theta, &v)?;
    let rhs = lin.separable_rhs(&v);
    let zeros = vec![vec![0.0; v.len()]; rhs.len()];
    let (y, _) = gamma.solve_linear_many(&lin, &rhs, &zeros)?;
    Ok(epl_design(model, &v, &y))
}

/// `(−Σ_i ∇²ℓ_i)⁻¹` at the estimate, i.e. `(N·Ĥ)⁻¹` with `Ĥ` the average
/// negative Hessian, for θ-separable linear-in-parameters models.
pub fn standard_errors_linear(
    result: &EstimationResult,
    counts: &PanelCounts,
    model: &MixtureDdcModel,
) -> Result<Covariance> {
    let state = &result.state;
    let mapping = result.method.mapping();
    if !mapping.is_theta_separable(model.linear_utility()) {
        return Err(Error::Config(format!(
            "analytic standard errors need a θ-separable method, got {}",
            result.method
        )));
    }
    let designs: Vec<LogitDesign> = state
        .theta
        .iter()
        .zip(&state.ccps)
        .map(|(t, p)| linear_design(model, mapping, t, p))
        .collect::<Result<_>>()?;
    covariance_from_designs(&designs, counts, &state.theta, &state.pi, model)
}

/// Covariance from given per-type designs.
pub fn covariance_from_designs(
    designs: &[LogitDesign],
    counts: &PanelCounts,
    theta: &[Vec<f64>],
    pi: &[f64],
    model: &MixtureDdcModel,
) -> Result<Covariance> {
    let na = model.n_actions();
    let params = pack_params(theta, pi);
    let h = mixture_hessian(designs, counts, &params, na)?;
    let h_fd = mixture_hessian_fd(designs, counts, &params, na, 1e-5)?;
    let scale = h.amax().max(1.0);
    let fd_discrepancy = (&h - &h_fd).amax() / scale;
    let info = -h;
    let cov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| {
            Error::SingularHessian(format!(
                "negative Hessian of dimension {} is not positive definite",
                info.nrows()
            ))
        })?;
    let dim = cov.nrows();
    let cov = (&cov + cov.transpose()) * 0.5;
    let mut names = Vec::with_capacity(dim);
    for m in 0..theta.len() {
        for n in model.param_names() {
            names.push(format!("type{}.{}", m + 1, n));
        }
    }
    for m in 0..pi.len() - 1 {
        names.push(format!("pi{}", m + 1));
    }
    let matrix: Vec<f64> = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
    Ok(Covariance {
        names,
        std_errors: (0..dim).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        matrix,
        fd_discrepancy,
    })
}
