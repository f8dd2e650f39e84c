//! EM-NPL(q): E-step, weighted pseudo-likelihood M-step, truncated nuisance
//! updates and CCP updates, plus multi-start selection, label matching and
//! standard errors.

pub mod data;
pub mod labels;
pub mod mstep;
pub mod multistart;
pub mod run;
pub mod se;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::maps::{check_euler_structure, InnerAlgorithm, Mapping};
use crate::model::MixtureDdcModel;
use crate::{Error, Result};

pub use data::{e_step, e_step_counts, EStep, PanelCounts};
pub use labels::{match_labels, permute, LabelMatch};
pub use mstep::{
    epl_design, gauss_newton_m_step, pv_design, separable_m_step, values_log_likelihood, GaussNewtonFit,
    GaussNewtonOptions, LogitDesign,
};
pub use multistart::{bootstrap, multi_start, prepare_start, InitMethod, MultiStartConfig};
pub use run::{
    ccp_update, em_npl_q_run, initial_theta_pv, pv_fixed_point_residual, CcpUpdate, EstimationResult, EstimationState, IterationTrace,
    RunConfig,
};
pub use se::{
    covariance_from_designs, linear_design, mixture_gradient, mixture_hessian, mixture_hessian_fd, pack_params,
    standard_errors_linear, Covariance,
};

/// Estimator / inner-algorithm combinations, named as in the output tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PV_GMRES")]
    PvGmres,
    #[serde(rename = "PV_SA")]
    PvSa,
    #[serde(rename = "BM_SA")]
    BmSa,
    #[serde(rename = "BM_AD")]
    BmAd,
    #[serde(rename = "BM_NT")]
    BmNt,
    #[serde(rename = "EE_SA")]
    EeSa,
    #[serde(rename = "EPL_GMRES")]
    EplGmres,
    /// Policy valuation run to convergence, then continued with EPL.
    #[serde(rename = "PV_EPL_GMRES")]
    PvEplGmres,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::PvGmres,
        Method::PvSa,
        Method::BmSa,
        Method::BmAd,
        Method::BmNt,
        Method::EeSa,
        Method::EplGmres,
        Method::PvEplGmres,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::PvGmres => "PV_GMRES",
            Method::PvSa => "PV_SA",
            Method::BmSa => "BM_SA",
            Method::BmAd => "BM_AD",
            Method::BmNt => "BM_NT",
            Method::EeSa => "EE_SA",
            Method::EplGmres => "EPL_GMRES",
            Method::PvEplGmres => "PV_EPL_GMRES",
        }
    }

    /// Mapping iterated in the main phase.
    pub fn mapping(self) -> Mapping {
        match self {
            Method::PvGmres | Method::PvSa => Mapping::PolicyValuation,
            Method::BmSa | Method::BmAd | Method::BmNt => Mapping::Bellman,
            Method::EeSa => Mapping::Euler,
            Method::EplGmres | Method::PvEplGmres => Mapping::Epl,
        }
    }

    pub fn algorithm(self) -> InnerAlgorithm {
        match self {
            Method::PvGmres | Method::EplGmres | Method::PvEplGmres => InnerAlgorithm::Gmres,
            Method::PvSa | Method::BmSa | Method::EeSa => InnerAlgorithm::Sa,
            Method::BmAd => InnerAlgorithm::Anderson,
            Method::BmNt => InnerAlgorithm::Newton,
        }
    }

    /// Rejects combinations the model does not support.
    pub fn check_model(self, model: &MixtureDdcModel) -> Result<()> {
        match self.mapping() {
            Mapping::Euler => check_euler_structure(model),
            Mapping::PolicyValuation | Mapping::Epl if !model.linear_utility() => Err(Error::Config(format!(
                "{} needs utility that is linear in parameters",
                self.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}
