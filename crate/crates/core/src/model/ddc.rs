use super::{CcpProfile, StateSpace};
use crate::linalg::{dot, KroneckerOperator};
use crate::{Error, Result};

/// Everything needed to assemble a [`MixtureDdcModel`].
#[derive(Debug, Clone)]
pub struct ModelParts {
    pub space: StateSpace,
    /// Exogenous transition kernels; `kernel_of_profile[p]` picks the one used
    /// after joint action profile `p`.
    pub exo_kernels: Vec<KroneckerOperator>,
    pub kernel_of_profile: Vec<usize>,
    /// `φ_j(x, p)` laid out `[firm][state][profile][param]`.
    pub basis: Vec<f64>,
    pub param_names: Vec<String>,
    pub beta: f64,
    pub type_params: Vec<Vec<f64>>,
    pub type_weights: Vec<f64>,
    /// Whether flow utility is `φ'θ`. Mappings that rely on θ-separability
    /// refuse models without this flag.
    pub linear_utility: bool,
    /// Observable state characteristics, `[state][feature]`, used by sieve
    /// initializations.
    pub state_features: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Index of the feature holding firm `j`'s lagged action, if any.
    pub lagged_action_feature: Option<usize>,
}

/// Finite-mixture dynamic discrete choice model (single agent or game).
///
/// Immutable after construction; the per-type structural parameters and
/// weights are the data-generating values.
#[derive(Debug, Clone)]
pub struct MixtureDdcModel {
    parts: ModelParts,
}

impl MixtureDdcModel {
    pub fn new(parts: ModelParts) -> Result<Self> {
        let s = &parts.space;
        if s.n_firms() == 0 || s.n_actions() < 2 {
            return Err(Error::InvalidInput("model needs at least one firm and two actions".into()));
        }
        if !(parts.beta >= 0.0 && parts.beta < 1.0) {
            return Err(Error::InvalidInput(format!("discount factor must lie in [0, 1), got {}", parts.beta)));
        }
        let d = parts.param_names.len();
        let expected = s.n_firms() * s.n_states() * s.n_profiles() * d;
        if parts.basis.len() != expected {
            return Err(Error::dims("utility basis", expected, parts.basis.len()));
        }
        if parts.basis.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("utility basis has non-finite entries".into()));
        }
        if parts.kernel_of_profile.len() != s.n_profiles() {
            return Err(Error::dims("kernel_of_profile", s.n_profiles(), parts.kernel_of_profile.len()));
        }
        for (i, k) in parts.exo_kernels.iter().enumerate() {
            if k.factor_sizes() != s.exo_sizes() {
                return Err(Error::InvalidInput(format!(
                    "exogenous kernel {i} has factor sizes {:?}, expected {:?}",
                    k.factor_sizes(),
                    s.exo_sizes()
                )));
            }
            if !k.is_row_stochastic(1e-10) {
                return Err(Error::InvalidInput(format!("exogenous kernel {i} is not row-stochastic")));
            }
        }
        if parts.kernel_of_profile.iter().any(|&k| k >= parts.exo_kernels.len()) {
            return Err(Error::InvalidInput("kernel_of_profile refers to a missing kernel".into()));
        }
        validate_types(&parts.type_params, &parts.type_weights, d)?;
        let nf = parts.feature_names.len();
        if parts.state_features.len() != s.n_states() * nf {
            return Err(Error::dims("state features", s.n_states() * nf, parts.state_features.len()));
        }
        Ok(MixtureDdcModel { parts })
    }

    /// Copy of the model with different data-generating types.
    pub fn with_types(&self, type_params: Vec<Vec<f64>>, type_weights: Vec<f64>) -> Result<Self> {
        validate_types(&type_params, &type_weights, self.n_params())?;
        let mut parts = self.parts.clone();
        parts.type_params = type_params;
        parts.type_weights = type_weights;
        Ok(MixtureDdcModel { parts })
    }

    pub fn parts(&self) -> &ModelParts {
        &self.parts
    }

    pub fn space(&self) -> &StateSpace {
        &self.parts.space
    }

    pub fn n_firms(&self) -> usize {
        self.parts.space.n_firms()
    }

    pub fn n_actions(&self) -> usize {
        self.parts.space.n_actions()
    }

    pub fn n_states(&self) -> usize {
        self.parts.space.n_states()
    }

    pub fn n_profiles(&self) -> usize {
        self.parts.space.n_profiles()
    }

    pub fn n_params(&self) -> usize {
        self.parts.param_names.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.parts.param_names
    }

    pub fn n_types(&self) -> usize {
        self.parts.type_params.len()
    }

    pub fn beta(&self) -> f64 {
        self.parts.beta
    }

    pub fn type_params(&self) -> &[Vec<f64>] {
        &self.parts.type_params
    }

    pub fn type_weights(&self) -> &[f64] {
        &self.parts.type_weights
    }

    pub fn linear_utility(&self) -> bool {
        self.parts.linear_utility
    }

    pub fn exo_kernels(&self) -> &[KroneckerOperator] {
        &self.parts.exo_kernels
    }

    pub fn kernel_of_profile(&self) -> &[usize] {
        &self.parts.kernel_of_profile
    }

    pub fn n_features(&self) -> usize {
        self.parts.feature_names.len()
    }

    pub fn state_features(&self, state: usize) -> &[f64] {
        let nf = self.n_features();
        &self.parts.state_features[state * nf..(state + 1) * nf]
    }

    /// `φ_j(x, p)`.
    pub fn phi(&self, firm: usize, state: usize, profile: usize) -> &[f64] {
        let d = self.n_params();
        let start = ((firm * self.n_states() + state) * self.n_profiles() + profile) * d;
        &self.parts.basis[start..start + d]
    }

    pub fn flow_utility(&self, firm: usize, state: usize, profile: usize, theta: &[f64]) -> f64 {
        dot(self.phi(firm, state, profile), theta)
    }

    /// Table `C[p][e] = Σ_{e'} K_{k(p)}(e'|e) · v(next_endo(p), e')` of expected
    /// next-period values after each joint profile, `[profile][exo]`.
    pub fn continuation_table(&self, v: &[f64], out: &mut [f64]) {
        let s = self.space();
        let n_exo = s.n_exo();
        let np = s.n_profiles();
        let n_kernels = self.parts.exo_kernels.len();
        let mut seen: Vec<Option<usize>> = vec![None; s.n_endo() * n_kernels];
        for p in 0..np {
            let endo = s.next_endo(p);
            let k = self.parts.kernel_of_profile[p];
            let key = endo * n_kernels + k;
            let (done, rest) = out.split_at_mut(p * n_exo);
            let dst = &mut rest[..n_exo];
            match seen[key] {
                Some(q) => dst.copy_from_slice(&done[q * n_exo..(q + 1) * n_exo]),
                None => {
                    self.parts.exo_kernels[k].apply_into(&v[endo * n_exo..(endo + 1) * n_exo], dst);
                    seen[key] = Some(p);
                }
            }
        }
    }

    /// `F_j(·|x, a)·v` for every `(x, a)`, given the continuation table.
    pub fn expected_continuation(&self, firm: usize, weights: &ProfileWeights, table: &[f64], out: &mut [f64]) {
        let s = self.space();
        let na = s.n_actions();
        let np = s.n_profiles();
        let n_exo = s.n_exo();
        out.iter_mut().for_each(|o| *o = 0.0);
        for x in 0..s.n_states() {
            let e = x % n_exo;
            let w = weights.rival_row(firm, x);
            let row = &mut out[x * na..(x + 1) * na];
            for p in 0..np {
                if w[p] != 0.0 {
                    row[s.profile_action(p, firm)] += w[p] * table[p * n_exo + e];
                }
            }
        }
    }

    /// `F_P·v` where `F_P` is the transition induced by the joint profile weights.
    pub fn policy_transition(&self, weights: &ProfileWeights, table: &[f64], out: &mut [f64]) {
        let s = self.space();
        let np = s.n_profiles();
        let n_exo = s.n_exo();
        for (x, o) in out.iter_mut().enumerate() {
            let e = x % n_exo;
            let w = weights.joint_row(x);
            *o = (0..np).map(|p| w[p] * table[p * n_exo + e]).sum();
        }
    }

    /// `φ̄_j(x, a) = Σ_{p: p_j = a} ω_{-j}(x, p)·φ_j(x, p)`, laid out `[state][action][param]`.
    pub fn expected_basis(&self, firm: usize, weights: &ProfileWeights) -> Vec<f64> {
        let s = self.space();
        let na = s.n_actions();
        let d = self.n_params();
        let mut out = vec![0.0; s.n_states() * na * d];
        for x in 0..s.n_states() {
            let w = weights.rival_row(firm, x);
            for (p, &wp) in w.iter().enumerate() {
                if wp == 0.0 {
                    continue;
                }
                let a = s.profile_action(p, firm);
                let dst = &mut out[(x * na + a) * d..(x * na + a + 1) * d];
                for (o, f) in dst.iter_mut().zip(self.phi(firm, x, p)) {
                    *o += wp * f;
                }
            }
        }
        out
    }

    /// Firm `j`'s expected utility basis and transition given rivals' CCPs.
    pub fn rival_expectation<'a>(&'a self, firm: usize, ccp: &CcpProfile) -> RivalExpectation<'a> {
        let weights = ProfileWeights::new(self, ccp);
        let basis = self.expected_basis(firm, &weights);
        RivalExpectation {
            model: self,
            firm,
            weights,
            basis,
        }
    }

    /// Conditional values `v(x, a) = φ̄_j(x, a)'θ + β·F_j(·|x, a)·V`, `[state][action]`.
    pub fn conditional_values(&self, theta: &[f64], value: &[f64], firm: usize, ccp: &CcpProfile) -> Vec<f64> {
        self.rival_expectation(firm, ccp).conditional_values(theta, value)
    }

    /// Dense transition probability `f(x'|x, p)`, for checks on small models.
    pub fn transition_entry(&self, profile: usize, from: usize, to: usize) -> f64 {
        let s = self.space();
        let (_, e) = s.split(from);
        let (endo_to, e_to) = s.split(to);
        if endo_to != s.next_endo(profile) {
            return 0.0;
        }
        self.parts.exo_kernels[self.parts.kernel_of_profile[profile]].entry(e, e_to)
    }
}

fn validate_types(type_params: &[Vec<f64>], type_weights: &[f64], d: usize) -> Result<()> {
    if type_params.is_empty() || type_params.len() != type_weights.len() {
        return Err(Error::InvalidInput(format!(
            "need matching non-empty type parameter and weight lists, got {} and {}",
            type_params.len(),
            type_weights.len()
        )));
    }
    for (m, t) in type_params.iter().enumerate() {
        if t.len() != d {
            return Err(Error::dims(format!("parameters of type {m}"), d, t.len()));
        }
    }
    let total: f64 = type_weights.iter().sum();
    if type_weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "type weights must be positive and sum to 1, got {type_weights:?}"
        )));
    }
    Ok(())
}

/// Probabilities of joint action profiles at every state implied by a CCP
/// profile: `ω(x, p) = Π_k P_k(p_k|x)` and, per firm, the rival product
/// `ω_{-j}(x, p) = Π_{k≠j} P_k(p_k|x)`.
#[derive(Debug, Clone)]
pub struct ProfileWeights {
    n_profiles: usize,
    joint: Vec<f64>,
    rival: Vec<Vec<f64>>,
}

impl ProfileWeights {
    pub fn new(model: &MixtureDdcModel, ccp: &CcpProfile) -> Self {
        let s = model.space();
        let np = s.n_profiles();
        let nx = s.n_states();
        let nj = s.n_firms();
        let mut joint = vec![0.0; nx * np];
        let mut rival = vec![vec![0.0; nx * np]; nj];
        let actions: Vec<Vec<usize>> = (0..np).map(|p| s.profile_actions(p)).collect();
        for x in 0..nx {
            for (p, acts) in actions.iter().enumerate() {
                let probs: Vec<f64> = acts.iter().enumerate().map(|(k, &a)| ccp.get(k, x, a)).collect();
                joint[x * np + p] = probs.iter().product();
                for (j, r) in rival.iter_mut().enumerate() {
                    r[x * np + p] = probs
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != j)
                        .map(|(_, q)| q)
                        .product();
                }
            }
        }
        ProfileWeights {
            n_profiles: np,
            joint,
            rival,
        }
    }

    pub fn joint_row(&self, state: usize) -> &[f64] {
        &self.joint[state * self.n_profiles..(state + 1) * self.n_profiles]
    }

    pub fn rival_row(&self, firm: usize, state: usize) -> &[f64] {
        &self.rival[firm][state * self.n_profiles..(state + 1) * self.n_profiles]
    }
}

/// Firm `j`'s view of the model once rivals' strategies are integrated out.
#[derive(Debug, Clone)]
pub struct RivalExpectation<'a> {
    model: &'a MixtureDdcModel,
    firm: usize,
    weights: ProfileWeights,
    basis: Vec<f64>,
}

impl RivalExpectation<'_> {
    pub fn firm(&self) -> usize {
        self.firm
    }

    pub fn weights(&self) -> &ProfileWeights {
        &self.weights
    }

    /// `φ̄_j`, `[state][action][param]`.
    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// `φ̄_j(x, a)'θ`, `[state][action]`.
    pub fn flow_utilities(&self, theta: &[f64]) -> Vec<f64> {
        self.basis.chunks_exact(theta.len()).map(|f| dot(f, theta)).collect()
    }

    /// `F_j(·|x, a)·v`, `[state][action]`.
    pub fn transition_apply(&self, v: &[f64]) -> Vec<f64> {
        let m = self.model;
        let mut table = vec![0.0; m.n_profiles() * m.space().n_exo()];
        m.continuation_table(v, &mut table);
        let mut out = vec![0.0; m.n_states() * m.n_actions()];
        m.expected_continuation(self.firm, &self.weights, &table, &mut out);
        out
    }

    pub fn conditional_values(&self, theta: &[f64], value: &[f64]) -> Vec<f64> {
        let beta = self.model.beta();
        let mut v = self.flow_utilities(theta);
        for (vi, c) in v.iter_mut().zip(self.transition_apply(value)) {
            *vi += beta * c;
        }
        v
    }
}
