//! WebAssembly bindings for a static browser page: inner-solver residual
//! traces, entry-game equilibrium choice probabilities and Tauchen grids.
//! Every export returns a JSON string so the page needs no extra glue.

use emnpl::estimator::Method;
use emnpl::harness::{inner_solve, DesignConfig, DesignKind};
use emnpl::model::{tauchen_discretize, Ar1Spec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct SolverTrace {
    pub method: String,
    pub dim: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub history: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GameCurve {
    /// `"incumbent"` or `"entrant"`, from firm 0's lagged action.
    pub status: String,
    pub active_rivals: usize,
    /// Entry probability of firm 0 at each market size.
    pub entry_prob: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct GameCcps {
    pub sizes: usize,
    pub curves: Vec<GameCurve>,
}

#[derive(Debug, Serialize)]
pub struct TauchenGrid {
    pub grid: Vec<f64>,
    /// Row-major transition matrix.
    pub transition: Vec<f64>,
    pub stationary: Vec<f64>,
}

fn to_js<T: Serialize>(r: emnpl::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// Residual traces of each listed method (comma separated, e.g.
/// `"PV_GMRES,BM_SA"`) solving the first type's nuisance block of the
/// single-agent entry/exit model from zero.
pub fn inner_traces(methods: &str, n_grid: usize, beta: f64, tol: f64) -> emnpl::Result<Vec<SolverTrace>> {
    let design = DesignConfig {
        family: DesignKind::EntryExitFd,
        n_grid: Some(n_grid),
        beta: Some(beta),
        ..Default::default()
    }
    .build()?;
    methods
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|name| {
            let method: Method = name.parse()?;
            let (dim, rep) = inner_solve(method, &design, 0, tol)?;
            Ok(SolverTrace {
                method: method.name().to_string(),
                dim,
                iterations: rep.iterations,
                converged: rep.converged,
                final_residual: rep.final_residual,
                history: rep.history,
            })
        })
        .collect()
}

/// Equilibrium entry probabilities of firm 0 in a symmetric-start entry
/// game, by market size, lagged status and number of lagged active rivals.
pub fn game_ccps(n_firms: usize, theta_rc: f64, beta: f64) -> emnpl::Result<GameCcps> {
    let design = DesignConfig {
        family: DesignKind::EntryGame,
        n_firms: Some(n_firms),
        theta_rc: Some(theta_rc),
        beta: Some(beta),
        ..Default::default()
    }
    .build()?;
    let space = design.model.space();
    let ccp = &design.policies[0];
    let n_sizes = space.n_exo();
    let mut curves = Vec::new();
    for own in [1, 0] {
        for rivals in 0..n_firms {
            let mut lag = vec![0; n_firms];
            lag[0] = own;
            for a in lag.iter_mut().skip(1).take(rivals) {
                *a = 1;
            }
            let endo = space.profile_index(&lag);
            curves.push(GameCurve {
                status: if own == 1 { "incumbent" } else { "entrant" }.into(),
                active_rivals: rivals,
                entry_prob: (0..n_sizes).map(|e| ccp.get(0, space.state_index(endo, e), 1)).collect(),
            });
        }
    }
    Ok(GameCcps {
        sizes: n_sizes,
        curves,
    })
}

/// Tauchen discretization of `y' = ρ y + σ η` on `n` points spanning
/// `±n_sigma` long-run standard deviations.
pub fn tauchen(n: usize, rho: f64, sigma: f64, n_sigma: f64) -> emnpl::Result<TauchenGrid> {
    let mut spec = Ar1Spec::new(0.0, rho, sigma, n);
    spec.n_sigma = n_sigma;
    let chain = tauchen_discretize(&spec)?;
    let t = &chain.transitions[0];
    let transition: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| t.get(i, j))).collect();
    let mut stationary = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| stationary[i] * transition[i * n + j]).sum()).collect();
        let diff = next.iter().zip(&stationary).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        stationary = next;
        if diff < 1e-13 {
            break;
        }
    }
    Ok(TauchenGrid {
        grid: chain.grid,
        transition,
        stationary,
    })
}

#[wasm_bindgen(js_name = innerTraces)]
pub fn inner_traces_js(methods: &str, n_grid: usize, beta: f64, tol: f64) -> Result<String, JsError> {
    to_js(inner_traces(methods, n_grid, beta, tol))
}

#[wasm_bindgen(js_name = gameCcps)]
pub fn game_ccps_js(n_firms: usize, theta_rc: f64, beta: f64) -> Result<String, JsError> {
    to_js(game_ccps(n_firms, theta_rc, beta))
}

#[wasm_bindgen(js_name = tauchenGrid)]
pub fn tauchen_js(n: usize, rho: f64, sigma: f64, n_sigma: f64) -> Result<String, JsError> {
    to_js(tauchen(n, rho, sigma, n_sigma))
}
