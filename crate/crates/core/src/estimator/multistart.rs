use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::PanelCounts;
use super::labels::{match_labels, permute};
use super::run::{em_npl_q_run, initial_theta_pv, EstimationResult, EstimationState, RunConfig};
use super::se::pack_params;
use crate::dgp::{frequency_ccp, replication_seed, sieve_logit_init, SieveInitConfig, SieveStart, LAPLACE_SMOOTHING};
use crate::model::{MixtureDdcModel, PanelData};
use crate::{Error, Result};

/// Initial CCP source of the first start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// Smoothed frequencies; single-type only.
    Frequency,
    /// Sieve logits with clustered (first start) or random starts.
    Sieve,
}

/// Settings of [`multi_start`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub n_types: usize,
    pub init: InitMethod,
    pub sieve: SieveInitConfig,
    pub run: RunConfig,
    /// Runs starts on the rayon pool when the `parallel` feature is on.
    pub parallel: bool,
}

impl MultiStartConfig {
    pub fn new(run: RunConfig, n_types: usize) -> Self {
        MultiStartConfig {
            n_starts: 1,
            seed: 0,
            n_types,
            init: InitMethod::Sieve,
            sieve: SieveInitConfig::default(),
            run,
            parallel: false,
        }
    }
}

/// Initial `(θ, π, P)` of start `index`. Start 0 is the clustered sieve (or
/// frequency) start; later starts perturb the sieve coefficients. θ⁰ comes
/// from one policy-valuation M-step, falling back to zeros when utility is
/// not linear.
pub fn prepare_start(
    data: &PanelData,
    model: &MixtureDdcModel,
    counts: &PanelCounts,
    config: &MultiStartConfig,
    index: usize,
) -> Result<EstimationState> {
    if config.n_types == 0 {
        return Err(Error::Config("at least one type is required".into()));
    }
    let (ccps, pi) = match config.init {
        InitMethod::Frequency if index == 0 => {
            if config.n_types != 1 {
                return Err(Error::Config("frequency initialization is single-type only".into()));
            }
            (vec![frequency_ccp(data, model, LAPLACE_SMOOTHING)?], vec![1.0])
        }
        _ => {
            let sieve = SieveInitConfig {
                n_types: config.n_types,
                ..config.sieve.clone()
            };
            let start = if index == 0 { SieveStart::Clustered } else { SieveStart::Random };
            let init = sieve_logit_init(data, model, &sieve, start, replication_seed(config.seed, index as u64))?;
            (init.ccps, init.pi)
        }
    };
    let theta = if model.linear_utility() {
        initial_theta_pv(model, counts, &ccps, &pi, &config.run.logit)?
    } else {
        vec![vec![0.0; model.n_params()]; config.n_types]
    };
    Ok(EstimationState::new(theta, pi, ccps))
}

fn run_start(
    data: &PanelData,
    model: &MixtureDdcModel,
    counts: &PanelCounts,
    config: &MultiStartConfig,
    index: usize,
) -> Result<EstimationResult> {
    let init = prepare_start(data, model, counts, config, index)?;
    em_npl_q_run(model, counts, &init, &config.run)
}

/// Runs EM-NPL(q) from `n_starts` initializations and keeps the converged run
/// with the highest final log pseudo-likelihood. When no run converges the
/// best non-converged run is returned; an error only when every start fails.
pub fn multi_start(data: &PanelData, model: &MixtureDdcModel, config: &MultiStartConfig) -> Result<EstimationResult> {
    if config.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    let counts = PanelCounts::new(data, model)?;
    let run = |i: usize| run_start(data, model, &counts, config, i);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<EstimationResult>> = if config.parallel {
        (0..config.n_starts).into_par_iter().map(run).collect()
    } else {
        (0..config.n_starts).map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<EstimationResult>> = (0..config.n_starts).map(run).collect();
    select_best(results)
}

fn select_best(results: Vec<Result<EstimationResult>>) -> Result<EstimationResult> {
    let starts = results.len();
    let mut errors = Vec::new();
    let mut best: Option<EstimationResult> = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (r.converged && !b.converged)
                            || (r.converged == b.converged
                                && r.state.log_pseudo_likelihood > b.state.log_pseudo_likelihood)
                    }
                };
                if better {
                    best = Some(r);
                }
            }
            Err(e) => errors.push(format!("start {i}: {e}")),
        }
    }
    best.ok_or_else(|| Error::AllStartsFailed {
        starts,
        details: errors.join("; "),
    })
}

/// Nonparametric bootstrap: re-runs the estimator on markets resampled with
/// replacement, starting from `estimate`. Returns packed
/// `(θ_1, …, θ_M, π_1, …, π_{M−1})` per replicate with labels matched to
/// `estimate`. Failed replicates are skipped.
pub fn bootstrap(
    model: &MixtureDdcModel,
    counts: &PanelCounts,
    estimate: &EstimationState,
    run: &RunConfig,
    n_boot: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let n = counts.n_markets();
    let one = |b: usize| -> Option<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, b as u64));
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let resampled = counts.resample(&idx);
        let r = em_npl_q_run(model, &resampled, estimate, run).ok()?;
        let lm = match_labels(&r.state.theta, &r.state.pi, &estimate.theta, &estimate.pi).ok()?;
        let theta = permute(&r.state.theta, &lm.permutation);
        let pi = permute(&r.state.pi, &lm.permutation);
        Some(pack_params(&theta, &pi))
    };
    #[cfg(feature = "parallel")]
    let draws: Vec<Option<Vec<f64>>> = (0..n_boot).into_par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Option<Vec<f64>>> = (0..n_boot).map(one).collect();
    draws.into_iter().flatten().collect()
}
