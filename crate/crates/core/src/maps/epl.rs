use std::cell::RefCell;

use crate::linalg::{DifferentiableMap, FixedPointMap, LinearOperator};
use crate::model::{social_surplus, CcpProfile, MixtureDdcModel, ProfileWeights, EULER_GAMMA};
use crate::{Error, Result};

/// Linearization of the equilibrium map `Φ(θ, v)` on stacked conditional
/// values `v = (v_1, …, v_J)`, laid out `[firm][state][action]`.
///
/// `Φ_j(x,a) = Σ_{p: p_j = a} ω_{-j}(x,p)[φ_j(x,p)'θ + β C_j(p, e(x))]`, where
/// the CCPs are `Λ(v)` and `C_j` continues with `S(v_j) + βκ`.
pub struct EplLinearization<'a> {
    model: &'a MixtureDdcModel,
    ccp: CcpProfile,
    weights: ProfileWeights,
    profile_actions: Vec<Vec<usize>>,
    psi: Vec<f64>,
    phi: Vec<f64>,
}

impl<'a> EplLinearization<'a> {
    pub fn new(model: &'a MixtureDdcModel, theta: &[f64], v: &[f64]) -> Result<Self> {
        let s = model.space();
        let (nj, nx, na, np, n_exo) = (s.n_firms(), s.n_states(), s.n_actions(), s.n_profiles(), s.n_exo());
        if theta.len() != model.n_params() {
            return Err(Error::dims("parameter vector", model.n_params(), theta.len()));
        }
        if v.len() != nj * nx * na {
            return Err(Error::dims("stacked conditional values", nj * nx * na, v.len()));
        }
        let ccp = CcpProfile::from_values(nj, nx, na, v);
        let weights = ProfileWeights::new(model, &ccp);
        let profile_actions: Vec<Vec<usize>> = (0..np).map(|p| s.profile_actions(p)).collect();
        let beta = model.beta();
        let shift = beta * EULER_GAMMA;
        let mut psi = vec![0.0; nj * nx * np];
        let mut phi = vec![0.0; nj * nx * na];
        let mut table = vec![0.0; np * n_exo];
        for j in 0..nj {
            let value: Vec<f64> = v[j * nx * na..(j + 1) * nx * na]
                .chunks_exact(na)
                .map(|vx| social_surplus(vx) + shift)
                .collect();
            model.continuation_table(&value, &mut table);
            for x in 0..nx {
                let e = x % n_exo;
                let w = weights.rival_row(j, x);
                for p in 0..np {
                    let val = model.flow_utility(j, x, p, theta) + beta * table[p * n_exo + e];
                    psi[(j * nx + x) * np + p] = val;
                    phi[(j * nx + x) * na + profile_actions[p][j]] += w[p] * val;
                }
            }
        }
        Ok(EplLinearization {
            model,
            ccp,
            weights,
            profile_actions,
            psi,
            phi,
        })
    }

    /// `Φ(θ, v)` at the linearization point.
    pub fn value(&self) -> &[f64] {
        &self.phi
    }

    /// CCPs `Λ(v)` at the linearization point.
    pub fn ccp(&self) -> &CcpProfile {
        &self.ccp
    }

    pub fn weights(&self) -> &ProfileWeights {
        &self.weights
    }

    /// Jacobian-vector product `∇_v Φ(θ, v)·d`.
    pub fn jvp(&self, d: &[f64], out: &mut [f64]) {
        let m = self.model;
        let s = m.space();
        let (nj, nx, na, np, n_exo) = (s.n_firms(), s.n_states(), s.n_actions(), s.n_profiles(), s.n_exo());
        let beta = m.beta();
        let block = nx * na;

        // δ_k(x, b) = d_k(x, b) − Σ_c P_k(c|x) d_k(x, c)
        let mut delta = vec![0.0; nj * block];
        let mut table = vec![0.0; np * n_exo];
        let mut cont = vec![0.0; block];
        for j in 0..nj {
            let dj = &d[j * block..(j + 1) * block];
            let mut sj = vec![0.0; nx];
            for x in 0..nx {
                let p = self.ccp.slice(j, x);
                let dx = &dj[x * na..(x + 1) * na];
                let mean: f64 = p.iter().zip(dx).map(|(a, b)| a * b).sum();
                sj[x] = mean;
                for a in 0..na {
                    delta[j * block + x * na + a] = dx[a] - mean;
                }
            }
            m.continuation_table(&sj, &mut table);
            m.expected_continuation(j, &self.weights, &table, &mut cont);
            for (o, c) in out[j * block..(j + 1) * block].iter_mut().zip(&cont) {
                *o = beta * c;
            }
        }
        if nj == 1 {
            return;
        }
        for j in 0..nj {
            for x in 0..nx {
                let w = self.weights.rival_row(j, x);
                for p in 0..np {
                    if w[p] == 0.0 {
                        continue;
                    }
                    let acts = &self.profile_actions[p];
                    let spread: f64 = (0..nj)
                        .filter(|&k| k != j)
                        .map(|k| delta[k * block + x * na + acts[k]])
                        .sum();
                    out[j * block + x * na + acts[j]] += w[p] * self.psi[(j * nx + x) * np + p] * spread;
                }
            }
        }
    }

    /// Right-hand sides of the θ-separable EPL step. Solving `(I − ∇Φ)·Y = r`
    /// for each returned `r` gives the update `v(θ) = ṽ − Y_0 + Σ_ℓ θ_ℓ Y_ℓ`.
    /// The first entry is `ṽ − Φ(0, ṽ)`, followed by `φ̄_ℓ` under `Λ(ṽ)`.
    pub fn separable_rhs(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let m = self.model;
        let s = m.space();
        let (nj, nx, na, np, n_exo) = (s.n_firms(), s.n_states(), s.n_actions(), s.n_profiles(), s.n_exo());
        let d = m.n_params();
        let block = nx * na;
        let beta = m.beta();
        let shift = beta * EULER_GAMMA;
        let mut out = vec![vec![0.0; nj * block]; d + 1];
        let mut table = vec![0.0; np * n_exo];
        let mut cont = vec![0.0; block];
        for j in 0..nj {
            let value: Vec<f64> = v[j * block..(j + 1) * block]
                .chunks_exact(na)
                .map(|vx| social_surplus(vx) + shift)
                .collect();
            m.continuation_table(&value, &mut table);
            m.expected_continuation(j, &self.weights, &table, &mut cont);
            for i in 0..block {
                out[0][j * block + i] = v[j * block + i] - beta * cont[i];
            }
            let basis = m.expected_basis(j, &self.weights);
            for i in 0..block {
                for l in 0..d {
                    out[l + 1][j * block + i] = basis[i * d + l];
                }
            }
        }
        out
    }
}

impl LinearOperator for EplLinearization<'_> {
    fn dim(&self) -> usize {
        self.phi.len()
    }

    /// `(I − ∇_v Φ)·x`.
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.jvp(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    }
}

/// `v ↦ Φ(θ, v)` as a differentiable fixed-point map.
pub struct EplMap<'a> {
    model: &'a MixtureDdcModel,
    theta: Vec<f64>,
    cache: RefCell<Option<(Vec<f64>, EplLinearization<'a>)>>,
}

impl<'a> EplMap<'a> {
    pub fn new(model: &'a MixtureDdcModel, theta: &[f64]) -> Result<Self> {
        if theta.len() != model.n_params() {
            return Err(Error::dims("parameter vector", model.n_params(), theta.len()));
        }
        Ok(EplMap {
            model,
            theta: theta.to_vec(),
            cache: RefCell::new(None),
        })
    }

    fn with_linearization<R>(&self, y: &[f64], f: impl FnOnce(&EplLinearization<'a>) -> R) -> R {
        let mut cache = self.cache.borrow_mut();
        let stale = !matches!(&*cache, Some((at, _)) if at.as_slice() == y);
        if stale {
            let lin = EplLinearization::new(self.model, &self.theta, y).expect("dimensions checked at construction");
            *cache = Some((y.to_vec(), lin));
        }
        f(&cache.as_ref().expect("cache filled above").1)
    }
}

impl FixedPointMap for EplMap<'_> {
    fn dim(&self) -> usize {
        self.model.n_firms() * self.model.n_states() * self.model.n_actions()
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        self.with_linearization(y, |lin| out.copy_from_slice(lin.value()));
    }
}

impl DifferentiableMap for EplMap<'_> {
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]) {
        self.with_linearization(y, |lin| lin.jvp(d, out));
    }
}
