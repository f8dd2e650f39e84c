use serde::{Deserialize, Serialize};

use super::SimulationSpec;
use crate::linalg::{DenseMatrix, KroneckerOperator};
use crate::model::{tauchen_discretize, Ar1Spec, MixtureDdcModel, ModelParts, StateSpace};
use crate::{Error, Result};

/// Law of motion of productivity in the entry/exit design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dependence {
    /// `w' = 0.2 + 0.6 w + η`: two-period finite dependence holds.
    #[serde(rename = "FD")]
    Fd,
    /// `w' = 0.2 + 0.3 a + 0.6 w + η`: the firm's action moves productivity.
    #[serde(rename = "NFD")]
    Nfd,
}

/// Single-agent entry/exit design with a finite mixture of types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntryExitSpec {
    pub dependence: Dependence,
    pub beta: f64,
    /// Grid points per exogenous variable.
    pub n_grid: usize,
    pub n_sigma: f64,
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub n_markets: usize,
    pub n_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for EntryExitSpec {
    fn default() -> Self {
        EntryExitSpec {
            dependence: Dependence::Fd,
            beta: 0.95,
            n_grid: 6,
            n_sigma: 3.0,
            theta: vec![
                vec![1.5, 1.5, -0.3, -0.3, -0.2, -0.3, -1.0],
                vec![0.2, 0.2, -0.2, -3.5, -2.0, -0.5, -3.0],
                vec![0.8, 0.8, -1.0, -1.5, -0.8, -3.0, -1.0],
            ],
            pi: vec![0.5, 0.3, 0.2],
            n_markets: 5000,
            n_periods: 20,
            burn_in: 100,
            seed: 1,
        }
    }
}

impl EntryExitSpec {
    pub fn simulation(&self) -> SimulationSpec {
        SimulationSpec {
            n_markets: self.n_markets,
            n_periods: self.n_periods,
            burn_in: self.burn_in,
            seed: self.seed,
        }
    }
}

pub const ENTRY_EXIT_PARAMS: [&str; 7] = ["vp0", "vp1", "vp2", "fc0", "fc1", "ec0", "ec1"];

/// Builds the entry/exit model. The state is `(a_{-1}; w, z1, z2, z3, z4)`
/// with `|X| = 2·n_grid⁵`; flow utility of staying active is
/// `(θ0 + θ1 z1 + θ2 z2)e^w − θ3 − θ4 z3 − (1 − a_{-1})(θ5 + θ6 z4)` written
/// with the signs folded into the basis, and inactivity pays zero.
pub fn build_entry_exit_model(spec: &EntryExitSpec) -> Result<MixtureDdcModel> {
    if spec.n_grid < 2 {
        return Err(Error::InvalidInput(format!("n_grid must be at least 2, got {}", spec.n_grid)));
    }
    let ng = spec.n_grid;
    let w_spec = match spec.dependence {
        Dependence::Fd => Ar1Spec::new(0.2, 0.6, 1.0, ng),
        Dependence::Nfd => Ar1Spec::new(0.2, 0.6, 1.0, ng).with_action_shift(0.3, 2),
    };
    let w_spec = Ar1Spec {
        n_sigma: spec.n_sigma,
        ..w_spec
    };
    let z_spec = Ar1Spec {
        n_sigma: spec.n_sigma,
        ..Ar1Spec::new(0.0, 0.6, 1.0, ng)
    };
    let w = tauchen_discretize(&w_spec)?;
    let z = tauchen_discretize(&z_spec)?;
    let zf = z.transitions[0].clone();
    let kernel = |fw: &DenseMatrix| KroneckerOperator::new(vec![fw.clone(), zf.clone(), zf.clone(), zf.clone(), zf.clone()]);
    let (exo_kernels, kernel_of_profile) = match spec.dependence {
        Dependence::Fd => (vec![kernel(&w.transitions[0])?], vec![0, 0]),
        Dependence::Nfd => (vec![kernel(&w.transitions[0])?, kernel(&w.transitions[1])?], vec![0, 1]),
    };

    let space = StateSpace::new(1, 2, true, vec![ng; 5]);
    let nx = space.n_states();
    let d = ENTRY_EXIT_PARAMS.len();
    let mut basis = vec![0.0; nx * 2 * d];
    let mut features = Vec::with_capacity(nx * 6);
    for x in 0..nx {
        let (lag, e) = space.split(x);
        let c = space.exo_components(e);
        let (wv, z1, z2, z3, z4) = (w.grid[c[0]], z.grid[c[1]], z.grid[c[2]], z.grid[c[3]], z.grid[c[4]]);
        let ew = wv.exp();
        let new = 1.0 - lag as f64;
        let phi1 = [ew, z1 * ew, z2 * ew, -1.0, -z3, -new, -new * z4];
        basis[(x * 2 + 1) * d..(x * 2 + 2) * d].copy_from_slice(&phi1);
        features.extend_from_slice(&[lag as f64, wv, z1, z2, z3, z4]);
    }
    MixtureDdcModel::new(ModelParts {
        space,
        exo_kernels,
        kernel_of_profile,
        basis,
        param_names: ENTRY_EXIT_PARAMS.iter().map(|s| s.to_string()).collect(),
        beta: spec.beta,
        type_params: spec.theta.clone(),
        type_weights: spec.pi.clone(),
        linear_utility: true,
        state_features: features,
        feature_names: ["lagged_action", "w", "z1", "z2", "z3", "z4"].iter().map(|s| s.to_string()).collect(),
        lagged_action_feature: Some(0),
    })
}

/// Dynamic entry game among `J` firms in markets of stochastic size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntryGameSpec {
    pub n_firms: usize,
    pub theta_rs: f64,
    pub theta_rc: f64,
    pub theta_ec: f64,
    /// Firm-specific fixed costs; when shorter than `n_firms` the default
    /// ladder is used.
    pub theta_fc: Vec<f64>,
    pub beta: f64,
    pub sizes: Vec<f64>,
    /// Row-major market-size transition matrix.
    pub size_transition: Vec<f64>,
    pub n_markets: usize,
    pub n_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

pub const DEFAULT_FIXED_COSTS: [f64; 7] = [1.9, 1.8, 1.7, 1.6, 1.5, 1.4, 1.3];

impl Default for EntryGameSpec {
    fn default() -> Self {
        EntryGameSpec {
            n_firms: 7,
            theta_rs: 1.0,
            theta_rc: 2.4,
            theta_ec: 1.0,
            theta_fc: DEFAULT_FIXED_COSTS.to_vec(),
            beta: 0.95,
            sizes: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            size_transition: vec![
                0.8, 0.2, 0.0, 0.0, 0.0, //
                0.2, 0.6, 0.2, 0.0, 0.0, //
                0.0, 0.2, 0.6, 0.2, 0.0, //
                0.0, 0.0, 0.2, 0.6, 0.2, //
                0.0, 0.0, 0.0, 0.2, 0.8,
            ],
            n_markets: 1600,
            n_periods: 1,
            burn_in: 100,
            seed: 1,
        }
    }
}

impl EntryGameSpec {
    /// Fixed costs actually used: the configured list, or the default ladder
    /// truncated to `n_firms`.
    pub fn fixed_costs(&self) -> Result<Vec<f64>> {
        if self.theta_fc.len() >= self.n_firms {
            return Ok(self.theta_fc[..self.n_firms].to_vec());
        }
        if self.n_firms <= DEFAULT_FIXED_COSTS.len() {
            return Ok(DEFAULT_FIXED_COSTS[..self.n_firms].to_vec());
        }
        Err(Error::InvalidInput(format!(
            "need {} fixed costs, got {}",
            self.n_firms,
            self.theta_fc.len()
        )))
    }

    pub fn simulation(&self) -> SimulationSpec {
        SimulationSpec {
            n_markets: self.n_markets,
            n_periods: self.n_periods,
            burn_in: self.burn_in,
            seed: self.seed,
        }
    }

    /// `(θ_RS, θ_RC, θ_EC, θ_FC,1..J)`.
    pub fn true_theta(&self) -> Result<Vec<f64>> {
        let mut t = vec![self.theta_rs, self.theta_rc, self.theta_ec];
        t.extend(self.fixed_costs()?);
        Ok(t)
    }
}

/// Builds the entry game. The state is `(lagged profile; s)` with
/// `|X| = |S|·2^J`. Firm `j`'s flow payoff when active is
/// `θ_RS s − θ_RC log(1 + #active rivals) − θ_EC(1 − a_{j,−1}) − θ_FC,j`.
pub fn build_entry_game_model(spec: &EntryGameSpec) -> Result<MixtureDdcModel> {
    let nj = spec.n_firms;
    if nj == 0 || nj > 12 {
        return Err(Error::InvalidInput(format!("n_firms must be in 1..=12, got {nj}")));
    }
    let ns = spec.sizes.len();
    let trans = DenseMatrix::new(ns, spec.size_transition.clone())?;
    let theta = spec.true_theta()?;
    let space = StateSpace::new(nj, 2, true, vec![ns]);
    let nx = space.n_states();
    let np = space.n_profiles();
    let d = 3 + nj;
    let mut basis = vec![0.0; nj * nx * np * d];
    let mut features = Vec::with_capacity(nx * (1 + nj));
    for x in 0..nx {
        let (lag_profile, e) = space.split(x);
        let lag = space.profile_actions(lag_profile);
        features.push(spec.sizes[e]);
        features.extend(lag.iter().map(|&a| a as f64));
        for p in 0..np {
            let acts = space.profile_actions(p);
            let active: usize = acts.iter().sum();
            for j in 0..nj {
                if acts[j] == 0 {
                    continue;
                }
                let start = ((j * nx + x) * np + p) * d;
                let row = &mut basis[start..start + d];
                row[0] = spec.sizes[e];
                row[1] = -((active - 1) as f64).ln_1p();
                row[2] = -(1.0 - lag[j] as f64);
                row[3 + j] = -1.0;
            }
        }
    }
    let mut names = vec!["rs".to_string(), "rc".to_string(), "ec".to_string()];
    names.extend((1..=nj).map(|j| format!("fc{j}")));
    let mut feature_names = vec!["size".to_string()];
    feature_names.extend((1..=nj).map(|j| format!("lagged_action{j}")));
    MixtureDdcModel::new(ModelParts {
        space,
        exo_kernels: vec![KroneckerOperator::new(vec![trans])?],
        kernel_of_profile: vec![0; np],
        basis,
        param_names: names,
        beta: spec.beta,
        type_params: vec![theta],
        type_weights: vec![1.0],
        linear_utility: true,
        state_features: features,
        feature_names,
        lagged_action_feature: Some(1),
    })
}
