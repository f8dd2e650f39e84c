use crate::linalg::{bb_step_size, gmres, newton_kantorovich, sup_diff, sup_norm, FixedPointMap, NewtonOptions};
use crate::maps::{policy_valuation_system, BellmanMap, EplMap};
use crate::model::{logit_ccp_into, CcpProfile, MixtureDdcModel};
use crate::{Error, Result};

/// Target residual for solved policies and equilibria.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

fn type_theta(model: &MixtureDdcModel, m: usize) -> Result<&[f64]> {
    model
        .type_params()
        .get(m)
        .map(|t| t.as_slice())
        .ok_or_else(|| Error::InvalidInput(format!("type {m} out of range (model has {})", model.n_types())))
}

/// Optimal value function and logit CCPs of type `m` in a single-agent model,
/// from Newton–Kantorovich on the Bellman equation.
pub fn solve_type_policy(model: &MixtureDdcModel, m: usize) -> Result<(Vec<f64>, CcpProfile)> {
    if model.n_firms() != 1 {
        return Err(Error::InvalidInput("solve_type_policy needs a single-agent model".into()));
    }
    let theta = type_theta(model, m)?;
    let nx = model.n_states();
    let na = model.n_actions();
    let dummy = CcpProfile::uniform(1, nx, na);
    let map = BellmanMap::new(model, 0, theta, &dummy)?;
    let (v, rep) = newton_kantorovich(&map, &vec![0.0; nx], 100, EQUILIBRIUM_TOL, NewtonOptions::default())?;
    if !rep.converged {
        return Err(Error::Equilibrium {
            residual: rep.final_residual,
            iterations: rep.iterations,
        });
    }
    let cond = map.conditional_values(&v);
    Ok((v, CcpProfile::from_values(1, nx, na, &cond)))
}

/// Policy-valuation residual `‖P − Λ(θ, V(P), P)‖∞`, where `V_j(P)` solves
/// firm `j`'s policy-valuation system.
pub fn equilibrium_residual(model: &MixtureDdcModel, theta: &[f64], ccp: &CcpProfile) -> Result<f64> {
    let nx = model.n_states();
    let na = model.n_actions();
    let mut worst: f64 = 0.0;
    let mut p = vec![0.0; na];
    for j in 0..model.n_firms() {
        let (op, b) = policy_valuation_system(model, j, theta, ccp)?;
        let (v, _) = gmres(&op, &b, &vec![0.0; nx], nx, 1e-13)?;
        let cond = model.conditional_values(theta, &v, j, ccp);
        for x in 0..nx {
            logit_ccp_into(&cond[x * na..(x + 1) * na], &mut p);
            worst = worst.max(sup_diff(&p, ccp.slice(j, x)));
        }
    }
    Ok(worst)
}

/// Markov perfect equilibrium of type `m` reached from `start`.
///
/// Runs spectrally damped best-response iteration on stacked conditional
/// values `v ← v − α(v − Φ(θ, v))`, then polishes with Newton–Kantorovich
/// steps on the same map. The equilibrium is selected by the start point.
pub fn solve_game_equilibrium(model: &MixtureDdcModel, m: usize, start: &CcpProfile) -> Result<CcpProfile> {
    let theta = type_theta(model, m)?;
    let (nj, nx, na) = (model.n_firms(), model.n_states(), model.n_actions());
    if start.n_firms() != nj || start.n_states() != nx || start.n_actions() != na {
        return Err(Error::InvalidInput("start CCPs do not match the model".into()));
    }
    let map = EplMap::new(model, theta)?;
    let n = map.dim();
    let mut v: Vec<f64> = start.as_slice().iter().map(|p| p.ln()).collect();
    let mut phi = vec![0.0; n];
    map.apply(&v, &mut phi);
    let mut resid: Vec<f64> = v.iter().zip(&phi).map(|(a, b)| a - b).collect();
    let mut alpha = bb_step_size(None, sup_norm(&resid)).alpha;
    let cap = 5000;
    let mut iterations = 0;
    while iterations < cap && sup_norm(&resid) > 1e-6 {
        let v_new: Vec<f64> = v.iter().zip(&resid).map(|(a, r)| a - alpha * r).collect();
        map.apply(&v_new, &mut phi);
        let resid_new: Vec<f64> = v_new.iter().zip(&phi).map(|(a, b)| a - b).collect();
        if resid_new.iter().any(|r| !r.is_finite()) {
            return Err(Error::Divergence { iteration: iterations });
        }
        let dv: Vec<f64> = v_new.iter().zip(&v).map(|(a, b)| a - b).collect();
        let dr: Vec<f64> = resid_new.iter().zip(&resid).map(|(a, b)| a - b).collect();
        alpha = bb_step_size(Some((&dv, &dr)), sup_norm(&resid_new)).alpha.clamp(1e-3, 10.0);
        v = v_new;
        resid = resid_new;
        iterations += 1;
    }
    let (v, rep) = newton_kantorovich(&map, &v, 50, 1e-12, NewtonOptions::default())?;
    let ccp = CcpProfile::from_values(nj, nx, na, &v);
    let residual = equilibrium_residual(model, theta, &ccp)?;
    if residual > EQUILIBRIUM_TOL {
        return Err(Error::Equilibrium {
            residual,
            iterations: iterations + rep.iterations,
        });
    }
    Ok(ccp)
}

/// Data-generating CCPs for every type: optimal policies for single-agent
/// models, equilibria from the uniform start for games.
pub fn solve_design(model: &MixtureDdcModel) -> Result<Vec<CcpProfile>> {
    (0..model.n_types())
        .map(|m| {
            if model.n_firms() == 1 {
                solve_type_policy(model, m).map(|(_, p)| p)
            } else {
                let start = CcpProfile::uniform(model.n_firms(), model.n_states(), model.n_actions());
                solve_game_equilibrium(model, m, &start)
            }
        })
        .collect()
}
