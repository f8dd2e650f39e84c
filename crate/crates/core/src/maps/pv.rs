use crate::linalg::LinearOperator;
use crate::model::{CcpProfile, MixtureDdcModel, ProfileWeights, EULER_GAMMA};
use crate::{Error, Result};

/// `A = I − β F_P`, where `F_P` is the state transition induced by a joint
/// CCP profile. Shared by every firm of a game and every W-component.
pub struct PolicyOperator<'a> {
    model: &'a MixtureDdcModel,
    weights: ProfileWeights,
}

impl<'a> PolicyOperator<'a> {
    pub fn new(model: &'a MixtureDdcModel, ccp: &CcpProfile) -> Self {
        PolicyOperator {
            model,
            weights: ProfileWeights::new(model, ccp),
        }
    }

    pub fn weights(&self) -> &ProfileWeights {
        &self.weights
    }

    /// `F_P·v`.
    pub fn transition_apply(&self, v: &[f64], out: &mut [f64]) {
        let m = self.model;
        let mut table = vec![0.0; m.n_profiles() * m.space().n_exo()];
        m.continuation_table(v, &mut table);
        m.policy_transition(&self.weights, &table, out);
    }
}

impl LinearOperator for PolicyOperator<'_> {
    fn dim(&self) -> usize {
        self.model.n_states()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.transition_apply(x, out);
        let beta = self.model.beta();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - beta * *o;
        }
    }
}

/// Right-hand sides `b_ℓ(x) = Σ_p ω(x,p) φ_{j,ℓ}(x,p)` for every parameter,
/// followed by the entropy term `b_P(x) = −Σ_a P_j(a|x) log P_j(a|x) + βκ`.
pub fn w_rhs(model: &MixtureDdcModel, firm: usize, ccp: &CcpProfile, weights: &ProfileWeights) -> Vec<Vec<f64>> {
    let nx = model.n_states();
    let d = model.n_params();
    let np = model.n_profiles();
    let beta = model.beta();
    let mut out = vec![vec![0.0; nx]; d + 1];
    for x in 0..nx {
        let w = weights.joint_row(x);
        for p in 0..np {
            if w[p] == 0.0 {
                continue;
            }
            for (l, f) in model.phi(firm, x, p).iter().enumerate() {
                out[l][x] += w[p] * f;
            }
        }
        let entropy: f64 = ccp.slice(firm, x).iter().map(|p| if *p > 0.0 { -p * p.ln() } else { 0.0 }).sum();
        out[d][x] = entropy + beta * EULER_GAMMA;
    }
    out
}

/// Policy-valuation system for firm `j`: solving `A·V = b` gives the value
/// of following `ccp`, `V = Σ_a P(a|x)[U − log P(a|x)] + βκ + βF_P V`.
pub fn policy_valuation_system<'a>(
    model: &'a MixtureDdcModel,
    firm: usize,
    theta: &[f64],
    ccp: &CcpProfile,
) -> Result<(PolicyOperator<'a>, Vec<f64>)> {
    if theta.len() != model.n_params() {
        return Err(Error::dims("parameter vector", model.n_params(), theta.len()));
    }
    let op = PolicyOperator::new(model, ccp);
    let parts = w_rhs(model, firm, ccp, op.weights());
    let b = combine_components(&parts, theta);
    Ok((op, b))
}

/// The `d_θ + 1` linear systems whose solutions `W_ℓ`, `W_P` give the value
/// function at any θ as `Σ_ℓ θ_ℓ W_ℓ + W_P`. The operator is the same for all
/// right-hand sides and does not depend on θ.
pub fn w_components_system<'a>(
    model: &'a MixtureDdcModel,
    firm: usize,
    ccp: &CcpProfile,
) -> Result<(PolicyOperator<'a>, Vec<Vec<f64>>)> {
    if !model.linear_utility() {
        return Err(Error::Config(
            "W-component systems need utility that is linear in parameters".into(),
        ));
    }
    let op = PolicyOperator::new(model, ccp);
    let rhs = w_rhs(model, firm, ccp, op.weights());
    Ok((op, rhs))
}

/// `Σ_ℓ θ_ℓ W_ℓ + W_P` for a stack of `d_θ + 1` vectors.
pub fn combine_components(components: &[Vec<f64>], theta: &[f64]) -> Vec<f64> {
    let d = theta.len();
    let mut v = components[d].clone();
    for (t, w) in theta.iter().zip(components) {
        for (vi, wi) in v.iter_mut().zip(w) {
            *vi += t * wi;
        }
    }
    v
}
