use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::design::DesignConfig;
use crate::estimator::{
    multi_start, standard_errors_linear, CcpUpdate, EstimationResult, InitMethod, Method, MultiStartConfig,
    PanelCounts, RunConfig,
};
use crate::maps::Truncation;
use crate::model::{MixtureDdcModel, PanelData};
use crate::{Error, Result};

/// One-shot estimation on a user-supplied panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// Model whose state space the panel uses; sample-size settings are ignored.
    pub design: DesignConfig,
    pub method: Method,
    pub q: Truncation,
    /// Types to estimate; defaults to the design's type count.
    pub n_types: Option<usize>,
    pub n_starts: usize,
    pub seed: u64,
    pub eps_outer: f64,
    pub inner_tol: f64,
    pub max_outer: usize,
    pub ccp_update: CcpUpdate,
    pub standard_errors: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            design: DesignConfig::default(),
            method: Method::PvGmres,
            q: Truncation::Steps(4),
            n_types: None,
            n_starts: 5,
            seed: 1,
            eps_outer: 1e-3,
            inner_tol: crate::maps::INNER_TOL,
            max_outer: 100,
            ccp_update: CcpUpdate::Spectral,
            standard_errors: true,
        }
    }
}

/// Result of [`estimate_once`] plus its text report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub result: EstimationResult,
    pub param_names: Vec<String>,
    /// Why standard errors are missing, when requested but unavailable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_note: Option<String>,
}

/// Multi-start estimation with analytic standard errors for θ-separable methods.
pub fn estimate_once(config: &EstimateConfig, data: &PanelData) -> Result<EstimateOutput> {
    let model = config.design.build_model()?;
    data.validate_against(&model)?;
    config.method.check_model(&model)?;
    let n_types = config.n_types.unwrap_or(model.n_types());
    if n_types == 0 {
        return Err(Error::Config("n_types must be at least 1".into()));
    }
    let run = RunConfig {
        eps_outer: config.eps_outer,
        inner_tol: config.inner_tol,
        max_outer: config.max_outer,
        ccp_update: config.ccp_update,
        ..RunConfig::new(config.method, config.q)
    };
    let mut ms = MultiStartConfig::new(run, n_types);
    ms.n_starts = config.n_starts.max(1);
    ms.seed = config.seed;
    ms.parallel = true;
    if n_types == 1 && model.n_firms() > 1 {
        ms.init = InitMethod::Frequency;
    }
    let mut result = multi_start(data, &model, &ms)?;
    let mut se_note = None;
    if config.standard_errors {
        let separable = config.method.mapping().is_theta_separable(model.linear_utility());
        if !separable {
            se_note = Some(format!("{} is not θ-separable; use the bootstrap", config.method));
        } else if !result.converged {
            se_note = Some("the estimator did not converge".into());
        } else {
            let counts = PanelCounts::new(data, &model)?;
            match standard_errors_linear(&result, &counts, &model) {
                Ok(c) => result.covariance = Some(c),
                Err(e) => se_note = Some(e.to_string()),
            }
        }
    }
    Ok(EstimateOutput {
        result,
        param_names: model.param_names().to_vec(),
        se_note,
    })
}

/// Plain-text report: estimates with standard errors, trace and timing.
pub fn render_report(out: &EstimateOutput, model: Option<&MixtureDdcModel>) -> String {
    let r = &out.result;
    let s = &r.state;
    let names = model.map(|m| m.param_names().to_vec()).unwrap_or_else(|| out.param_names.clone());
    let d = names.len();
    let se = |k: usize| r.covariance.as_ref().map(|c| c.std_errors[k]);
    let mut t = String::new();
    let _ = writeln!(t, "method            {}", r.method);
    let _ = writeln!(t, "q                 {}", r.q);
    let _ = writeln!(t, "converged         {}", r.converged);
    let _ = writeln!(t, "outer iterations  {}", r.outer_iterations);
    let _ = writeln!(t, "inner iterations  {}", r.inner_iterations);
    let _ = writeln!(t, "wall time (s)     {:.4}", r.wall_time);
    let _ = writeln!(t, "log pseudo-lik    {:.6}", s.log_pseudo_likelihood);
    if let Some(f) = &r.failure {
        let _ = writeln!(t, "stopped because   {f}");
    }
    let m_types = s.pi.len();
    for m in 0..m_types {
        let _ = writeln!(t, "\ntype {}  (π = {:.4}{})", m + 1, s.pi[m], pi_se(out, m).map(|v| format!(", se {v:.4}")).unwrap_or_default());
        let _ = writeln!(t, "  {:<12} {:>12} {:>12}", "param", "estimate", "std. error");
        for (k, name) in names.iter().enumerate() {
            let e = se(m * d + k).map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(t, "  {:<12} {:>12.6} {:>12}", name, s.theta[m][k], e);
        }
    }
    if let Some(note) = &out.se_note {
        let _ = writeln!(t, "\nstandard errors unavailable: {note}");
    }
    if !r.trace.is_empty() {
        let _ = writeln!(t, "\n{:>5} {:>11} {:>11} {:>11} {:>11} {:>14}", "iter", "|ΔP|", "|Δθ|", "|ΔV|rel", "|Δπ|", "log-lik");
        for it in &r.trace {
            let _ = writeln!(
                t,
                "{:>5} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>14.6}",
                it.iteration, it.ccp_change, it.theta_change, it.value_change, it.pi_change, it.log_pseudo_likelihood
            );
        }
    }
    t
}

// Standard error of π_m; the last weight uses Var(1 − Σ π_k).
fn pi_se(out: &EstimateOutput, m: usize) -> Option<f64> {
    let c = out.result.covariance.as_ref()?;
    let n_types = out.result.state.pi.len();
    let base = n_types * out.param_names.len();
    if m + 1 < n_types {
        Some(c.std_errors[base + m])
    } else if n_types > 1 {
        let mut v = 0.0;
        for a in 0..n_types - 1 {
            for b in 0..n_types - 1 {
                v += c.get(base + a, base + b);
            }
        }
        Some(v.max(0.0).sqrt())
    } else {
        None
    }
}
