use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower bound applied to every choice probability.
pub const CCP_FLOOR: f64 = 1e-12;

/// Euler–Mascheroni constant, the mean of a standard Type-I extreme value draw.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `log Σ_a exp(v_a)`, shifted by the maximum for stability.
pub fn social_surplus(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Logit probabilities of `v`, written into `out` and floored.
pub fn logit_ccp_into(v: &[f64], out: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    floor_probabilities(out);
}

pub fn logit_ccp(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    logit_ccp_into(v, &mut out);
    out
}

/// Clips entries at [`CCP_FLOOR`] and renormalizes when anything was clipped.
pub fn floor_probabilities(p: &mut [f64]) {
    let mut clipped = false;
    for x in p.iter_mut() {
        if !(*x >= CCP_FLOOR) {
            *x = CCP_FLOOR;
            clipped = true;
        }
    }
    if clipped {
        let s: f64 = p.iter().sum();
        for x in p.iter_mut() {
            *x /= s;
        }
    }
}

/// Choice probabilities `P_j(a|x)` of one type, laid out firm-major then
/// state then action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpProfile {
    n_firms: usize,
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl CcpProfile {
    pub fn uniform(n_firms: usize, n_states: usize, n_actions: usize) -> Self {
        CcpProfile {
            n_firms,
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_firms * n_states * n_actions],
        }
    }

    /// Wraps raw probabilities, flooring each slice and checking that slices
    /// sum to one within `1e-8`.
    pub fn from_vec(n_firms: usize, n_states: usize, n_actions: usize, mut probs: Vec<f64>) -> Result<Self> {
        let expected = n_firms * n_states * n_actions;
        if probs.len() != expected {
            return Err(Error::dims("CCP profile entries", expected, probs.len()));
        }
        for (i, slice) in probs.chunks_exact_mut(n_actions).enumerate() {
            let s: f64 = slice.iter().sum();
            if !s.is_finite() || (s - 1.0).abs() > 1e-8 || slice.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "CCP slice {i} is not a probability vector (sum {s})"
                )));
            }
            floor_probabilities(slice);
        }
        Ok(CcpProfile {
            n_firms,
            n_states,
            n_actions,
            probs,
        })
    }

    /// Builds a profile from conditional values laid out like the profile.
    pub fn from_values(n_firms: usize, n_states: usize, n_actions: usize, values: &[f64]) -> Self {
        let mut probs = vec![0.0; values.len()];
        for (v, p) in values.chunks_exact(n_actions).zip(probs.chunks_exact_mut(n_actions)) {
            logit_ccp_into(v, p);
        }
        CcpProfile {
            n_firms,
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_firms(&self) -> usize {
        self.n_firms
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, firm: usize, state: usize, action: usize) -> f64 {
        self.probs[(firm * self.n_states + state) * self.n_actions + action]
    }

    pub fn slice(&self, firm: usize, state: usize) -> &[f64] {
        let start = (firm * self.n_states + state) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn slice_mut(&mut self, firm: usize, state: usize) -> &mut [f64] {
        let start = (firm * self.n_states + state) * self.n_actions;
        &mut self.probs[start..start + self.n_actions]
    }

    /// All `(state, action)` probabilities of one firm.
    pub fn firm(&self, firm: usize) -> &[f64] {
        let len = self.n_states * self.n_actions;
        &self.probs[firm * len..(firm + 1) * len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Replaces the probabilities, flooring every slice.
    pub fn set_from_slice(&mut self, probs: &[f64]) {
        self.probs.copy_from_slice(probs);
        for slice in self.probs.chunks_exact_mut(self.n_actions) {
            floor_probabilities(slice);
        }
    }

    pub fn max_abs_diff(&self, other: &CcpProfile) -> f64 {
        crate::linalg::sup_diff(&self.probs, &other.probs)
    }
}
