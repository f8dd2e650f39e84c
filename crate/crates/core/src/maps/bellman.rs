use crate::linalg::{DifferentiableMap, FixedPointMap};
use crate::model::{logit_ccp_into, social_surplus, CcpProfile, MixtureDdcModel, RivalExpectation, EULER_GAMMA};
use crate::{Error, Result};

/// Smoothed Bellman operator of firm `j` with rivals' CCPs held fixed:
/// `V(x) = log Σ_a exp(φ̄_j(x,a)'θ + β F_j(·|x,a)·V) + βκ`.
pub struct BellmanMap<'a> {
    model: &'a MixtureDdcModel,
    rival: RivalExpectation<'a>,
    flow: Vec<f64>,
}

impl<'a> BellmanMap<'a> {
    pub fn new(model: &'a MixtureDdcModel, firm: usize, theta: &[f64], ccp: &CcpProfile) -> Result<Self> {
        if theta.len() != model.n_params() {
            return Err(Error::dims("parameter vector", model.n_params(), theta.len()));
        }
        let rival = model.rival_expectation(firm, ccp);
        let flow = rival.flow_utilities(theta);
        Ok(BellmanMap { model, rival, flow })
    }

    /// Conditional values `v(x,a)` implied by `value`.
    pub fn conditional_values(&self, value: &[f64]) -> Vec<f64> {
        let beta = self.model.beta();
        let mut v = self.rival.transition_apply(value);
        for (vi, f) in v.iter_mut().zip(&self.flow) {
            *vi = f + beta * *vi;
        }
        v
    }
}

impl FixedPointMap for BellmanMap<'_> {
    fn dim(&self) -> usize {
        self.model.n_states()
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        let na = self.model.n_actions();
        let shift = self.model.beta() * EULER_GAMMA;
        let v = self.conditional_values(y);
        for (o, vx) in out.iter_mut().zip(v.chunks_exact(na)) {
            *o = social_surplus(vx) + shift;
        }
    }
}

impl DifferentiableMap for BellmanMap<'_> {
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]) {
        let na = self.model.n_actions();
        let beta = self.model.beta();
        let v = self.conditional_values(y);
        let fd = self.rival.transition_apply(d);
        let mut p = vec![0.0; na];
        for (x, o) in out.iter_mut().enumerate() {
            logit_ccp_into(&v[x * na..(x + 1) * na], &mut p);
            *o = beta * p.iter().zip(&fd[x * na..(x + 1) * na]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}
