use serde::{Deserialize, Serialize};

use crate::dgp::{
    build_entry_exit_model, build_entry_game_model, simulate_panel, solve_design, Dependence, EntryExitSpec,
    EntryGameSpec, SimulationSpec,
};
use crate::model::{CcpProfile, MixtureDdcModel, PanelData};
use crate::{Error, Result};

/// Monte Carlo design families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DesignKind {
    #[serde(rename = "entry_exit_FD")]
    EntryExitFd,
    #[serde(rename = "entry_exit_NFD")]
    EntryExitNfd,
    #[serde(rename = "entry_game")]
    EntryGame,
}

/// A design family with optional overrides of its defaults. Overrides that
/// do not apply to the family are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub family: DesignKind,
    pub n_markets: Option<usize>,
    pub n_periods: Option<usize>,
    pub burn_in: Option<usize>,
    pub beta: Option<f64>,
    /// Grid points per exogenous variable (entry/exit only).
    pub n_grid: Option<usize>,
    /// True parameters per type.
    pub theta: Option<Vec<Vec<f64>>>,
    /// True mixing weights (entry/exit only).
    pub pi: Option<Vec<f64>>,
    /// Competition effect (entry game only).
    pub theta_rc: Option<f64>,
    /// Number of firms (entry game only).
    pub n_firms: Option<usize>,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            family: DesignKind::EntryExitFd,
            n_markets: None,
            n_periods: None,
            burn_in: None,
            beta: None,
            n_grid: None,
            theta: None,
            pi: None,
            theta_rc: None,
            n_firms: None,
        }
    }
}

/// A built design: the model, the data-generating policies and the truth.
#[derive(Debug, Clone)]
pub struct Design {
    pub kind: DesignKind,
    pub model: MixtureDdcModel,
    pub policies: Vec<CcpProfile>,
    pub simulation: SimulationSpec,
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
}

impl DesignConfig {
    pub fn is_game(&self) -> bool {
        self.family == DesignKind::EntryGame
    }

    pub fn entry_exit_spec(&self) -> Result<EntryExitSpec> {
        if self.is_game() {
            return Err(Error::Config("entry/exit settings requested for the entry game".into()));
        }
        if self.theta_rc.is_some() || self.n_firms.is_some() {
            return Err(Error::Config("theta_rc and n_firms apply to the entry game only".into()));
        }
        let base = EntryExitSpec::default();
        let theta = self.theta.clone().unwrap_or(base.theta.clone());
        let pi = match (&self.pi, &self.theta) {
            (Some(p), _) => p.clone(),
            (None, Some(t)) if t.len() != base.pi.len() => vec![1.0 / t.len() as f64; t.len()],
            _ => base.pi.clone(),
        };
        Ok(EntryExitSpec {
            dependence: if self.family == DesignKind::EntryExitNfd {
                Dependence::Nfd
            } else {
                Dependence::Fd
            },
            beta: self.beta.unwrap_or(base.beta),
            n_grid: self.n_grid.unwrap_or(base.n_grid),
            theta,
            pi,
            n_markets: self.n_markets.unwrap_or(base.n_markets),
            n_periods: self.n_periods.unwrap_or(base.n_periods),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            ..base
        })
    }

    pub fn entry_game_spec(&self) -> Result<EntryGameSpec> {
        if !self.is_game() {
            return Err(Error::Config("entry game settings requested for an entry/exit design".into()));
        }
        if self.n_grid.is_some() || self.pi.is_some() {
            return Err(Error::Config("n_grid and pi apply to entry/exit designs only".into()));
        }
        let base = EntryGameSpec::default();
        let mut spec = EntryGameSpec {
            n_firms: self.n_firms.unwrap_or(base.n_firms),
            theta_rc: self.theta_rc.unwrap_or(base.theta_rc),
            beta: self.beta.unwrap_or(base.beta),
            n_markets: self.n_markets.unwrap_or(base.n_markets),
            n_periods: self.n_periods.unwrap_or(base.n_periods),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            ..base
        };
        if let Some(theta) = &self.theta {
            let [t] = theta.as_slice() else {
                return Err(Error::Config("the entry game has a single type".into()));
            };
            if t.len() != 3 + spec.n_firms {
                return Err(Error::dims("entry game θ", 3 + spec.n_firms, t.len()));
            }
            spec.theta_rs = t[0];
            spec.theta_rc = t[1];
            spec.theta_ec = t[2];
            spec.theta_fc = t[3..].to_vec();
        }
        Ok(spec)
    }

    /// The model alone, without solving for equilibrium policies.
    pub fn build_model(&self) -> Result<MixtureDdcModel> {
        if self.is_game() {
            build_entry_game_model(&self.entry_game_spec()?)
        } else {
            build_entry_exit_model(&self.entry_exit_spec()?)
        }
    }

    /// Builds the model and solves every type's policy.
    pub fn build(&self) -> Result<Design> {
        let model = self.build_model()?;
        let simulation = if self.is_game() {
            self.entry_game_spec()?.simulation()
        } else {
            self.entry_exit_spec()?.simulation()
        };
        let policies = solve_design(&model)?;
        Ok(Design {
            kind: self.family,
            theta: model.type_params().to_vec(),
            pi: model.type_weights().to_vec(),
            model,
            policies,
            simulation,
        })
    }
}

impl Design {
    pub fn n_types(&self) -> usize {
        self.pi.len()
    }

    /// Simulates one panel with the given seed.
    pub fn simulate(&self, seed: u64) -> Result<PanelData> {
        simulate_panel(
            &self.model,
            &self.policies,
            &self.pi,
            &SimulationSpec {
                seed,
                ..self.simulation
            },
        )
    }
}

/// Panel generation settings for the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub design: DesignConfig,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            design: DesignConfig::default(),
            seed: 1,
        }
    }
}

/// True parameters written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub family: DesignKind,
    pub param_names: Vec<String>,
    pub theta: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub seed: u64,
}

/// Simulates a panel and returns it with the truth.
pub fn simulate_design(config: &SimulateConfig) -> Result<(PanelData, Truth)> {
    let design = config.design.build()?;
    let data = design.simulate(config.seed)?;
    let truth = Truth {
        family: design.kind,
        param_names: design.model.param_names().to_vec(),
        theta: design.theta,
        pi: design.pi,
        seed: config.seed,
    };
    Ok((data, truth))
}
