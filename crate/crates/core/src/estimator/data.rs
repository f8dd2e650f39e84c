use crate::dgp::posterior_weights;
use crate::model::{CcpProfile, MixtureDdcModel, PanelData};
use crate::Result;

/// Per-market action counts over `(firm, state, action)` cells, indexed like
/// the flat layout of [`CcpProfile`].
#[derive(Debug, Clone)]
pub struct PanelCounts {
    n_cells: usize,
    markets: Vec<Vec<(usize, f64)>>,
}

impl PanelCounts {
    pub fn new(data: &PanelData, model: &MixtureDdcModel) -> Result<Self> {
        data.validate_against(model)?;
        let (nx, na) = (model.n_states(), model.n_actions());
        let n_cells = model.n_firms() * nx * na;
        let markets = (0..data.n_markets())
            .map(|i| {
                let mut cells: Vec<(usize, f64)> = Vec::with_capacity(data.n_periods() * data.n_firms());
                for t in 0..data.n_periods() {
                    let x = data.state(i, t);
                    for j in 0..data.n_firms() {
                        cells.push(((j * nx + x) * na + data.action(i, t, j), 1.0));
                    }
                }
                cells.sort_unstable_by_key(|c| c.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(cells.len());
                for (c, n) in cells {
                    match merged.last_mut() {
                        Some(last) if last.0 == c => last.1 += n,
                        _ => merged.push((c, n)),
                    }
                }
                merged
            })
            .collect();
        Ok(PanelCounts { n_cells, markets })
    }

    pub fn n_markets(&self) -> usize {
        self.markets.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn market(&self, i: usize) -> &[(usize, f64)] {
        &self.markets[i]
    }

    /// `Σ_i w_i · counts_i`.
    pub fn weighted(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells];
        for (cells, w) in self.markets.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            for &(c, n) in cells {
                out[c] += w * n;
            }
        }
        out
    }

    /// Log-likelihood of every market under `ccp`.
    pub fn market_log_likelihoods(&self, ccp: &CcpProfile) -> Vec<f64> {
        let p = ccp.as_slice();
        self.markets
            .iter()
            .map(|cells| cells.iter().map(|&(c, n)| n * p[c].ln()).sum())
            .collect()
    }

    /// Resamples markets with the given indices (for bootstrap).
    pub fn resample(&self, markets: &[usize]) -> Self {
        PanelCounts {
            n_cells: self.n_cells,
            markets: markets.iter().map(|&i| self.markets[i].clone()).collect(),
        }
    }
}

/// Posterior type weights, updated mixing weights and the mixture log
/// pseudo-likelihood at the CCPs and weights that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// `[market][type]`; each row sums to one.
    pub weights: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub log_likelihood: f64,
}

impl EStep {
    /// Weights of type `m` across markets.
    pub fn type_weights(&self, m: usize) -> Vec<f64> {
        self.weights.iter().map(|r| r[m]).collect()
    }
}

/// E-step on pre-aggregated counts, in log space.
pub fn e_step_counts(counts: &PanelCounts, ccps: &[CcpProfile], pi: &[f64]) -> EStep {
    let log_lik: Vec<Vec<f64>> = ccps.iter().map(|p| counts.market_log_likelihoods(p)).collect();
    let (weights, log_likelihood) = posterior_weights(&log_lik, pi);
    let n = weights.len().max(1) as f64;
    let pi = (0..pi.len()).map(|m| weights.iter().map(|r| r[m]).sum::<f64>() / n).collect();
    EStep {
        weights,
        pi,
        log_likelihood,
    }
}

/// E-step: `w_im ∝ π_m Π_t Π_j P_j^m(a_jit | x_it)` and `π_m = N⁻¹ Σ_i w_im`.
pub fn e_step(data: &PanelData, model: &MixtureDdcModel, ccps: &[CcpProfile], pi: &[f64]) -> Result<EStep> {
    Ok(e_step_counts(&PanelCounts::new(data, model)?, ccps, pi))
}
