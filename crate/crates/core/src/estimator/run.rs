use serde::{Deserialize, Serialize};

use super::data::{e_step_counts, PanelCounts};
use super::mstep::{
    epl_design, gauss_newton_m_step, pv_design, separable_m_step, GaussNewtonOptions, LogitDesign,
};
use super::se::Covariance;
use super::Method;
use crate::clock::Stopwatch;
use crate::linalg::{bb_step_size, gmres, sup_diff, sup_norm, SolverReport};
use crate::logit::LogitOptions;
use crate::maps::{
    combine_components, make_gamma, w_rhs, BellmanMap, EplLinearization, EulerMap, Gamma, Mapping, PolicyOperator,
    Truncation,
};
use crate::model::{CcpProfile, MixtureDdcModel};
use crate::{Error, Result};

/// How CCPs are updated after the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcpUpdate {
    Plain,
    /// `P ← P − α(P − Λ)` with a Barzilai–Borwein step per type. EPL
    /// methods always use the plain update.
    Spectral,
}

/// Settings of one EM-NPL(q) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub q: Truncation,
    pub eps_outer: f64,
    pub max_outer: usize,
    pub inner_tol: f64,
    pub ccp_update: CcpUpdate,
    pub logit: LogitOptions,
    pub gauss_newton: GaussNewtonOptions,
}

impl RunConfig {
    pub fn new(method: Method, q: Truncation) -> Self {
        RunConfig {
            method,
            q,
            eps_outer: 1e-3,
            max_outer: 100,
            inner_tol: crate::maps::INNER_TOL,
            ccp_update: CcpUpdate::Spectral,
            logit: LogitOptions::default(),
            gauss_newton: GaussNewtonOptions::default(),
        }
    }

    fn gamma(&self, method: Method, q: Truncation) -> Gamma {
        make_gamma(method.algorithm(), q).with_tol(self.inner_tol)
    }
}

/// The fixed-point tuple `(θ, π, P)` of every type plus bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationState {
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub ccps: Vec<CcpProfile>,
    pub iteration: usize,
    /// Mixture log pseudo-likelihood at `(P, π)`.
    pub log_pseudo_likelihood: f64,
}

impl EstimationState {
    pub fn new(theta: Vec<Vec<f64>>, pi: Vec<f64>, ccps: Vec<CcpProfile>) -> Self {
        EstimationState {
            theta,
            pi,
            ccps,
            iteration: 0,
            log_pseudo_likelihood: f64::NAN,
        }
    }

    pub fn n_types(&self) -> usize {
        self.pi.len()
    }
}

/// Change norms of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub ccp_change: f64,
    pub theta_change: f64,
    /// `‖ΔV‖∞ / (1 + ‖V_prev‖∞)`.
    pub value_change: f64,
    pub pi_change: f64,
    pub log_pseudo_likelihood: f64,
    pub inner_iterations: usize,
}

impl IterationTrace {
    pub fn max_change(&self) -> f64 {
        self.ccp_change.max(self.theta_change).max(self.value_change).max(self.pi_change)
    }
}

/// Output of [`em_npl_q_run`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub q: Truncation,
    pub state: EstimationState,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Seconds of estimation, including the initial full nuisance solve.
    pub wall_time: f64,
    pub trace: Vec<IterationTrace>,
    /// Why the run stopped early, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Covariance>,
}

// Nuisance block carried between outer iterations for one type.
#[derive(Debug, Clone)]
enum Nuisance {
    /// `[firm][component][state]`.
    W(Vec<Vec<Vec<f64>>>),
    /// `[firm][state]`.
    Value(Vec<Vec<f64>>),
    /// `[state][action]`, column 0 identically zero.
    Diff(Vec<f64>),
    /// Linearization point and separable solutions.
    Epl { v: Vec<f64>, y: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
struct TypeState {
    theta: Vec<f64>,
    ccp: CcpProfile,
    nuisance: Nuisance,
    /// Value summary used in the stopping rule.
    value: Vec<f64>,
    /// `(P, P − Λ)` of the previous spectral update.
    spectral: Option<(Vec<f64>, Vec<f64>)>,
}

struct Step {
    theta: Vec<f64>,
    lambda: Vec<f64>,
    nuisance: Nuisance,
    value: Vec<f64>,
    inner: usize,
}

fn firm_values(model: &MixtureDdcModel, w: &[Vec<Vec<f64>>], theta: &[f64]) -> Vec<f64> {
    (0..model.n_firms()).flat_map(|j| combine_components(&w[j], theta)).collect()
}

fn solve_w(
    model: &MixtureDdcModel,
    ccp: &CcpProfile,
    gamma: &Gamma,
    prev: Option<&[Vec<Vec<f64>>]>,
) -> Result<(Vec<Vec<Vec<f64>>>, SolverReport)> {
    let op = PolicyOperator::new(model, ccp);
    let mut report = SolverReport::empty_converged();
    let mut out = Vec::with_capacity(model.n_firms());
    for j in 0..model.n_firms() {
        let rhs = w_rhs(model, j, ccp, op.weights());
        let start = match prev {
            Some(p) => p[j].clone(),
            None => vec![vec![0.0; model.n_states()]; rhs.len()],
        };
        let (w, r) = gamma.solve_linear_many(&op, &rhs, &start)?;
        report.absorb(&r);
        out.push(w);
    }
    Ok((out, report))
}

fn bellman_values(
    model: &MixtureDdcModel,
    theta: &[f64],
    ccp: &CcpProfile,
    gamma: &Gamma,
    prev: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, usize)> {
    let mut values = Vec::with_capacity(model.n_firms());
    let mut cond = Vec::with_capacity(model.n_firms() * model.n_states() * model.n_actions());
    let mut inner = 0;
    for (j, start) in prev.iter().enumerate() {
        let map = BellmanMap::new(model, j, theta, ccp)?;
        let (v, rep) = gamma.solve_diff_map(&map, start)?;
        inner += rep.iterations;
        cond.extend(map.conditional_values(&v));
        values.push(v);
    }
    Ok((values, cond, inner))
}

fn euler_values(model: &MixtureDdcModel, theta: &[f64], gamma: &Gamma, prev: &[f64]) -> Result<(Vec<f64>, usize)> {
    let map = EulerMap::new(model, theta)?;
    let (v, rep) = gamma.solve_diff_map(&map, prev)?;
    Ok((v, rep.iterations))
}

/// Conditional values from policy valuation at `(θ, P)`, solved to convergence.
fn pv_conditional_values(model: &MixtureDdcModel, theta: &[f64], ccp: &CcpProfile) -> Result<Vec<f64>> {
    let gamma = make_gamma(crate::maps::InnerAlgorithm::Gmres, Truncation::Converge).with_tol(1e-10);
    let (w, _) = solve_w(model, ccp, &gamma, None)?;
    Ok(pv_design(model, ccp, &w).values(theta))
}

/// θ⁰ from one policy-valuation M-step at the initial CCPs, weighting markets
/// by the posteriors those CCPs imply.
pub fn initial_theta_pv(
    model: &MixtureDdcModel,
    counts: &PanelCounts,
    ccps: &[CcpProfile],
    pi: &[f64],
    opts: &LogitOptions,
) -> Result<Vec<Vec<f64>>> {
    let e = e_step_counts(counts, ccps, pi);
    let gamma = make_gamma(crate::maps::InnerAlgorithm::Gmres, Truncation::Converge).with_tol(1e-10);
    ccps.iter()
        .enumerate()
        .map(|(m, ccp)| {
            let (w, _) = solve_w(model, ccp, &gamma, None)?;
            let design = pv_design(model, ccp, &w);
            let n = counts.weighted(&e.type_weights(m));
            let fit = separable_m_step(&design, &n, &vec![0.0; model.n_params()], &relaxed(opts))?;
            Ok(fit.theta)
        })
        .collect()
}

fn relaxed(opts: &LogitOptions) -> LogitOptions {
    LogitOptions {
        max_iter: opts.max_iter.max(100),
        ..*opts
    }
}

// Fully solved nuisance block at the initial point.
fn initial_nuisance(
    model: &MixtureDdcModel,
    method: Method,
    gamma_full: &Gamma,
    theta: &[f64],
    ccp: &CcpProfile,
) -> Result<(Nuisance, Vec<f64>, usize)> {
    let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
    match method.mapping() {
        Mapping::PolicyValuation => {
            let (w, rep) = solve_w(model, ccp, gamma_full, None)?;
            let value = firm_values(model, &w, theta);
            Ok((Nuisance::W(w), value, rep.iterations))
        }
        Mapping::Bellman => {
            let (values, _, inner) = bellman_values(model, theta, ccp, gamma_full, &vec![vec![0.0; nx]; nj])?;
            let value = values.concat();
            Ok((Nuisance::Value(values), value, inner))
        }
        Mapping::Euler => {
            let (v, inner) = euler_values(model, theta, gamma_full, &vec![0.0; nx * na])?;
            Ok((Nuisance::Diff(v.clone()), v, inner))
        }
        Mapping::Epl => {
            let v = pv_conditional_values(model, theta, ccp)?;
            let lin = EplLinearization::new(model, theta, &v)?;
            let rhs = lin.separable_rhs(&v);
            let zeros = vec![vec![0.0; v.len()]; rhs.len()];
            let (y, rep) = gamma_full.solve_linear_many(&lin, &rhs, &zeros)?;
            Ok((Nuisance::Epl { v: v.clone(), y }, v, rep.iterations))
        }
    }
}

// Nuisance update plus M-step for one type. Returns θ_new, Λ(θ_new, Y_new, P_prev) and Y_new.
fn type_step(
    model: &MixtureDdcModel,
    config: &RunConfig,
    gamma: &Gamma,
    ts: &TypeState,
    counts: &[f64],
) -> Result<Step> {
    let na = model.n_actions();
    match &ts.nuisance {
        Nuisance::W(w_prev) => {
            let (w, rep) = solve_w(model, &ts.ccp, gamma, Some(w_prev))?;
            let design = pv_design(model, &ts.ccp, &w);
            let fit = separable_m_step(&design, counts, &ts.theta, &config.logit)?;
            let lambda = ccp_values(&design, &fit.theta);
            let value = firm_values(model, &w, &fit.theta);
            Ok(Step {
                theta: fit.theta,
                lambda,
                nuisance: Nuisance::W(w),
                value,
                inner: rep.iterations,
            })
        }
        Nuisance::Epl { v, y } => {
            let lin = EplLinearization::new(model, &ts.theta, v)?;
            let rhs = lin.separable_rhs(v);
            let (y_new, rep) = gamma.solve_linear_many(&lin, &rhs, y)?;
            let design = epl_design(model, v, &y_new);
            let fit = separable_m_step(&design, counts, &ts.theta, &config.logit)?;
            let v_new = design.values(&fit.theta);
            let lambda = ccp_values(&design, &fit.theta);
            Ok(Step {
                theta: fit.theta,
                lambda,
                value: v_new.clone(),
                nuisance: Nuisance::Epl { v: v_new, y: y_new },
                inner: rep.iterations,
            })
        }
        Nuisance::Value(prev) => {
            let mut inner = 0;
            let mut eval = |theta: &[f64]| -> Result<Vec<f64>> {
                let (_, cond, it) = bellman_values(model, theta, &ts.ccp, gamma, prev)?;
                inner += it;
                Ok(cond)
            };
            let fit = gauss_newton_m_step(&mut eval, counts, na, &ts.theta, &config.gauss_newton)?;
            let (values, cond, it) = bellman_values(model, &fit.theta, &ts.ccp, gamma, prev)?;
            let mut lambda = vec![0.0; cond.len()];
            super::mstep::logit_rows(&cond, na, &mut lambda);
            Ok(Step {
                theta: fit.theta,
                lambda,
                value: values.concat(),
                nuisance: Nuisance::Value(values),
                inner: inner + it,
            })
        }
        Nuisance::Diff(prev) => {
            let mut inner = 0;
            let mut eval = |theta: &[f64]| -> Result<Vec<f64>> {
                let (v, it) = euler_values(model, theta, gamma, prev)?;
                inner += it;
                Ok(v)
            };
            let fit = gauss_newton_m_step(&mut eval, counts, na, &ts.theta, &config.gauss_newton)?;
            let (v, it) = euler_values(model, &fit.theta, gamma, prev)?;
            let mut lambda = vec![0.0; v.len()];
            super::mstep::logit_rows(&v, na, &mut lambda);
            Ok(Step {
                theta: fit.theta,
                lambda,
                value: v.clone(),
                nuisance: Nuisance::Diff(v),
                inner: inner + it,
            })
        }
    }
}

fn ccp_values(design: &LogitDesign, theta: &[f64]) -> Vec<f64> {
    design.ccp(theta).as_slice().to_vec()
}

/// Updates CCPs from `P_prev` toward `Λ`. Spectral mode uses the previous
/// `(P, P − Λ)` pair for a Barzilai–Borwein step and floors the result.
/// Returns the new CCPs and the pair to carry forward.
pub fn ccp_update(
    p_prev: &CcpProfile,
    lambda: &[f64],
    spectral: bool,
    history: Option<&(Vec<f64>, Vec<f64>)>,
) -> (CcpProfile, Option<(Vec<f64>, Vec<f64>)>) {
    let mut out = p_prev.clone();
    if !spectral {
        out.set_from_slice(lambda);
        return (out, None);
    }
    let p = p_prev.as_slice();
    let phi: Vec<f64> = p.iter().zip(lambda).map(|(a, b)| a - b).collect();
    let phi_norm = sup_norm(&phi);
    let step = match history {
        Some((p_old, phi_old)) => {
            let dp: Vec<f64> = p.iter().zip(p_old).map(|(a, b)| a - b).collect();
            let dphi: Vec<f64> = phi.iter().zip(phi_old).map(|(a, b)| a - b).collect();
            bb_step_size(Some((&dp, &dphi)), phi_norm)
        }
        None => bb_step_size(None, phi_norm),
    };
    let mut next: Vec<f64> = p.iter().zip(&phi).map(|(a, f)| a - step.alpha * f).collect();
    let na = p_prev.n_actions();
    for row in next.chunks_exact_mut(na) {
        for x in row.iter_mut() {
            if !(*x >= 0.0) {
                *x = 0.0;
            }
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / na as f64);
        }
    }
    out.set_from_slice(&next);
    (out, Some((p.to_vec(), phi)))
}

fn use_spectral(config: &RunConfig, method: Method) -> bool {
    method.mapping() != Mapping::Epl && config.ccp_update == CcpUpdate::Spectral
}

/// Runs EM-NPL(q) from `init` until the stopping rule or `max_outer`.
/// Numerical failures end the run with `converged = false`.
pub fn em_npl_q_run(
    model: &MixtureDdcModel,
    counts: &PanelCounts,
    init: &EstimationState,
    config: &RunConfig,
) -> Result<EstimationResult> {
    validate(model, counts, init, config)?;
    let watch = Stopwatch::start();
    let mut inner_total = 0;
    let mut trace = Vec::new();
    let mut failure = None;
    let mut converged = false;
    let mut pi = init.pi.clone();
    let mut types: Vec<TypeState> = Vec::with_capacity(init.n_types());
    let mut iteration = 0;

    let phases: Vec<(Method, Truncation, usize)> = match config.method {
        Method::PvEplGmres => vec![
            (Method::PvGmres, Truncation::Converge, config.max_outer),
            (Method::EplGmres, config.q, config.max_outer),
        ],
        m => vec![(m, config.q, config.max_outer)],
    };

    'phases: for (phase, &(method, q, max_outer)) in phases.iter().enumerate() {
        let gamma = config.gamma(method, q);
        let gamma_full = config.gamma(method, Truncation::Converge);
        let spectral = use_spectral(config, method);
        let prepared: Result<Vec<TypeState>> = if phase == 0 {
            init.theta
                .iter()
                .zip(&init.ccps)
                .map(|(theta, ccp)| {
                    let (nuisance, value, inner) = initial_nuisance(model, method, &gamma_full, theta, ccp)?;
                    inner_total += inner;
                    Ok(TypeState {
                        theta: theta.clone(),
                        ccp: ccp.clone(),
                        nuisance,
                        value,
                        spectral: None,
                    })
                })
                .collect()
        } else {
            types
                .iter()
                .map(|ts| {
                    let (nuisance, value, inner) = initial_nuisance(model, method, &gamma_full, &ts.theta, &ts.ccp)?;
                    inner_total += inner;
                    Ok(TypeState {
                        nuisance,
                        value,
                        spectral: None,
                        ..ts.clone()
                    })
                })
                .collect()
        };
        types = match prepared {
            Ok(t) => t,
            Err(e) => {
                failure = Some(e.to_string());
                break 'phases;
            }
        };
        converged = false;

        for _ in 0..max_outer {
            iteration += 1;
            let ccps: Vec<CcpProfile> = types.iter().map(|t| t.ccp.clone()).collect();
            let e = e_step_counts(counts, &ccps, &pi);
            let mut record = IterationTrace {
                iteration,
                ccp_change: 0.0,
                theta_change: 0.0,
                value_change: 0.0,
                pi_change: sup_diff(&e.pi, &pi),
                log_pseudo_likelihood: e.log_likelihood,
                inner_iterations: 0,
            };
            let mut next = Vec::with_capacity(types.len());
            for (m, ts) in types.iter().enumerate() {
                let n = counts.weighted(&e.type_weights(m));
                let step = match type_step(model, config, &gamma, ts, &n) {
                    Ok(s) => s,
                    Err(err) => {
                        failure = Some(format!("outer iteration {iteration}, type {m}: {err}"));
                        break;
                    }
                };
                let (ccp, history) = ccp_update(&ts.ccp, &step.lambda, spectral, ts.spectral.as_ref());
                record.ccp_change = record.ccp_change.max(ccp.max_abs_diff(&ts.ccp));
                record.theta_change = record.theta_change.max(sup_diff(&step.theta, &ts.theta));
                record.value_change = record
                    .value_change
                    .max(sup_diff(&step.value, &ts.value) / (1.0 + sup_norm(&ts.value)));
                record.inner_iterations += step.inner;
                next.push(TypeState {
                    theta: step.theta,
                    ccp,
                    nuisance: step.nuisance,
                    value: step.value,
                    spectral: history,
                });
            }
            if failure.is_some() {
                break 'phases;
            }
            inner_total += record.inner_iterations;
            pi = e.pi;
            types = next;
            let done = record.max_change() <= config.eps_outer;
            let finite = record.max_change().is_finite();
            trace.push(record);
            if !finite {
                failure = Some(format!("non-finite iterate at outer iteration {iteration}"));
                break 'phases;
            }
            if done {
                converged = true;
                break;
            }
        }
        if !converged {
            break;
        }
    }

    let wall_time = watch.seconds();
    let ccps: Vec<CcpProfile> = if types.is_empty() {
        init.ccps.clone()
    } else {
        types.iter().map(|t| t.ccp.clone()).collect()
    };
    let theta = if types.is_empty() {
        init.theta.clone()
    } else {
        types.iter().map(|t| t.theta.clone()).collect()
    };
    let final_ll = e_step_counts(counts, &ccps, &pi).log_likelihood;
    Ok(EstimationResult {
        method: config.method,
        q: config.q,
        state: EstimationState {
            theta,
            pi,
            ccps,
            iteration,
            log_pseudo_likelihood: final_ll,
        },
        converged: converged && failure.is_none(),
        outer_iterations: iteration,
        inner_iterations: inner_total,
        wall_time,
        trace,
        failure,
        covariance: None,
    })
}

fn validate(model: &MixtureDdcModel, counts: &PanelCounts, init: &EstimationState, config: &RunConfig) -> Result<()> {
    config.method.check_model(model)?;
    if config.max_outer == 0 {
        return Err(Error::Config("max_outer must be at least 1".into()));
    }
    if !(config.eps_outer > 0.0) {
        return Err(Error::Config("eps_outer must be positive".into()));
    }
    let m = init.n_types();
    if m == 0 || init.theta.len() != m || init.ccps.len() != m {
        return Err(Error::InvalidInput("initial state needs matching θ, π and CCPs per type".into()));
    }
    if init.pi.iter().any(|p| !(*p > 0.0)) || (init.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("initial π must be interior, got {:?}", init.pi)));
    }
    for (t, p) in init.theta.iter().zip(&init.ccps) {
        if t.len() != model.n_params() {
            return Err(Error::dims("initial θ", model.n_params(), t.len()));
        }
        if p.n_firms() != model.n_firms() || p.n_states() != model.n_states() || p.n_actions() != model.n_actions() {
            return Err(Error::InvalidInput("initial CCPs do not match the model".into()));
        }
    }
    if counts.n_cells() != model.n_firms() * model.n_states() * model.n_actions() {
        return Err(Error::InvalidInput("panel counts were built for a different model".into()));
    }
    Ok(())
}

/// Residual `‖P − Λ(θ, V(P), P)‖∞` of a PV fixed point, via dense-free GMRES.
pub fn pv_fixed_point_residual(model: &MixtureDdcModel, theta: &[f64], ccp: &CcpProfile) -> Result<f64> {
    let op = PolicyOperator::new(model, ccp);
    let nx = model.n_states();
    let mut w = Vec::new();
    for j in 0..model.n_firms() {
        let rhs = w_rhs(model, j, ccp, op.weights());
        let mut wj = Vec::new();
        for b in &rhs {
            wj.push(gmres(&op, b, &vec![0.0; nx], nx, 1e-12)?.0);
        }
        w.push(wj);
    }
    let lambda = pv_design(model, ccp, &w).ccp(theta);
    Ok(lambda.max_abs_diff(ccp))
}
