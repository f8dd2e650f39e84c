use serde::{Deserialize, Serialize};

use super::design::{Design, DesignConfig};
use crate::estimator::{linear_design, Method};
use crate::linalg::SolverReport;
use crate::maps::{make_gamma, w_rhs, BellmanMap, EplLinearization, EulerMap, Mapping, PolicyOperator, Truncation};
use crate::{Error, Result};

/// Inner-solver benchmark at the true parameters and equilibrium CCPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub design: DesignConfig,
    /// Methods to benchmark; empty means every method the design supports.
    pub methods: Vec<Method>,
    pub tol: f64,
    /// Timed repetitions per solve; the minimum time is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            design: DesignConfig::default(),
            methods: Vec::new(),
            tol: crate::maps::INNER_TOL,
            repeats: 3,
        }
    }
}

/// Cost of solving one type's nuisance block to tolerance from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: Method,
    pub type_index: usize,
    pub dim: usize,
    pub iterations: usize,
    pub wall_time: f64,
    pub final_residual: f64,
    pub converged: bool,
}

/// Solves type `m`'s nuisance block with `method` from zero to `tol`, returning
/// the block dimension and the aggregated report (with residual history).
pub fn inner_solve(method: Method, design: &Design, m: usize, tol: f64) -> Result<(usize, SolverReport)> {
    method.check_model(&design.model)?;
    let model = &design.model;
    let theta = &design.theta[m];
    let ccp = &design.policies[m];
    let gamma = make_gamma(method.algorithm(), Truncation::Converge).with_tol(tol);
    let nx = model.n_states();
    let mut total = SolverReport {
        converged: true,
        ..Default::default()
    };
    let dim;
    match method.mapping() {
        Mapping::PolicyValuation => {
            let op = PolicyOperator::new(model, ccp);
            dim = nx;
            for j in 0..model.n_firms() {
                let rhs = w_rhs(model, j, ccp, op.weights());
                let zeros = vec![vec![0.0; nx]; rhs.len()];
                total.absorb(&gamma.solve_linear_many(&op, &rhs, &zeros)?.1);
            }
        }
        Mapping::Bellman => {
            dim = nx;
            for j in 0..model.n_firms() {
                let map = BellmanMap::new(model, j, theta, ccp)?;
                total.absorb(&gamma.solve_diff_map(&map, &vec![0.0; nx])?.1);
            }
        }
        Mapping::Euler => {
            let map = EulerMap::new(model, theta)?;
            dim = nx * model.n_actions();
            total.absorb(&gamma.solve_diff_map(&map, &vec![0.0; dim])?.1);
        }
        Mapping::Epl => {
            let v = linear_design(model, Mapping::PolicyValuation, theta, ccp)?.values(theta);
            let lin = EplLinearization::new(model, theta, &v)?;
            let rhs = lin.separable_rhs(&v);
            dim = v.len();
            let zeros = vec![vec![0.0; dim]; rhs.len()];
            total.absorb(&gamma.solve_linear_many(&lin, &rhs, &zeros)?.1);
        }
    }
    Ok((dim, total))
}

/// Solves every type's nuisance block with each method and reports
/// iterations, time and residual.
pub fn bench_inner(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let design = config.design.build()?;
    let methods: Vec<Method> = if config.methods.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|m| *m != Method::PvEplGmres && m.check_model(&design.model).is_ok())
            .collect()
    } else {
        for m in &config.methods {
            m.check_model(&design.model)?;
        }
        config.methods.clone()
    };
    let mut out = Vec::new();
    for method in methods {
        for m in 0..design.n_types() {
            let mut best: Option<(usize, SolverReport)> = None;
            for _ in 0..config.repeats {
                let (dim, rep) = inner_solve(method, &design, m, config.tol)?;
                if best.as_ref().is_none_or(|(_, b)| rep.wall_time < b.wall_time) {
                    best = Some((dim, rep));
                }
            }
            let (dim, rep) = best.expect("at least one repeat");
            out.push(BenchRecord {
                method,
                type_index: m,
                dim,
                iterations: rep.iterations,
                wall_time: rep.wall_time,
                final_residual: rep.final_residual,
                converged: rep.converged,
            });
        }
    }
    Ok(out)
}

/// Fixed-width text rendering of benchmark records.
pub fn render_bench(records: &[BenchRecord]) -> String {
    let mut out = format!(
        "{:<10} {:>4} {:>7} {:>8} {:>12} {:>12} {:>6}\n",
        "method", "type", "dim", "iters", "time (s)", "residual", "conv"
    );
    for r in records {
        out.push_str(&format!(
            "{:<10} {:>4} {:>7} {:>8} {:>12.6} {:>12.3e} {:>6}\n",
            r.method.name(),
            r.type_index + 1,
            r.dim,
            r.iterations,
            r.wall_time,
            r.final_residual,
            r.converged
        ));
    }
    out
}
