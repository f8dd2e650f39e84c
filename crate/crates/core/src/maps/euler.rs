use crate::linalg::{DifferentiableMap, FixedPointMap, KroneckerOperator};
use crate::model::{logit_ccp_into, social_surplus, MixtureDdcModel};
use crate::{Error, Result};

/// Euler-equation operator on value differences `ṽ(x,a) = v(x,a) − v(x,0)`
/// for single-agent models whose endogenous state is the lagged action:
/// `ṽ(x,a) = c(x,a) + β Σ_z' f(z'|z)[S(ṽ(a,z')) − S(ṽ(0,z'))]`.
pub struct EulerMap<'a> {
    model: &'a MixtureDdcModel,
    kernel: &'a KroneckerOperator,
    c: Vec<f64>,
}

/// Checks the two-period finite-dependence structure the Euler mapping needs.
pub fn check_euler_structure(model: &MixtureDdcModel) -> Result<()> {
    let s = model.space();
    if s.n_firms() != 1 {
        return Err(Error::Config("the Euler mapping is available for single-agent models only".into()));
    }
    if !s.tracks_lagged_actions() {
        return Err(Error::Config(
            "the Euler mapping needs the endogenous state to be exactly the lagged action".into(),
        ));
    }
    let k = model.kernel_of_profile();
    if k.iter().any(|&i| i != k[0]) {
        return Err(Error::Config(
            "the Euler mapping needs an exogenous transition that does not depend on the action".into(),
        ));
    }
    Ok(())
}

impl<'a> EulerMap<'a> {
    pub fn new(model: &'a MixtureDdcModel, theta: &[f64]) -> Result<Self> {
        check_euler_structure(model)?;
        if theta.len() != model.n_params() {
            return Err(Error::dims("parameter vector", model.n_params(), theta.len()));
        }
        let kernel = &model.exo_kernels()[model.kernel_of_profile()[0]];
        let s = model.space();
        let na = s.n_actions();
        let n_exo = s.n_exo();
        let nx = s.n_states();
        let u: Vec<f64> = (0..nx)
            .flat_map(|x| (0..na).map(move |a| (x, a)))
            .map(|(x, a)| model.flow_utility(0, x, a, theta))
            .collect();
        let u0: Vec<f64> = (0..nx).map(|x| u[x * na]).collect();
        let h = lag_blocks(kernel, &u0, na, n_exo);
        let beta = model.beta();
        let mut c = vec![0.0; nx * na];
        for x in 0..nx {
            let e = x % n_exo;
            for a in 0..na {
                c[x * na + a] = u[x * na + a] - u[x * na] + beta * (h[a * n_exo + e] - h[e]);
            }
        }
        Ok(EulerMap { model, kernel, c })
    }

    /// The constant term `c(x,a;θ)`.
    pub fn constant(&self) -> &[f64] {
        &self.c
    }
}

// For each lag block ℓ, the kernel applied to that block of `values`.
fn lag_blocks(kernel: &KroneckerOperator, values: &[f64], na: usize, n_exo: usize) -> Vec<f64> {
    let mut out = vec![0.0; na * n_exo];
    for l in 0..na {
        kernel.apply_into(&values[l * n_exo..(l + 1) * n_exo], &mut out[l * n_exo..(l + 1) * n_exo]);
    }
    out
}

impl FixedPointMap for EulerMap<'_> {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        let s = self.model.space();
        let na = s.n_actions();
        let n_exo = s.n_exo();
        let surplus: Vec<f64> = y.chunks_exact(na).map(social_surplus).collect();
        let g = lag_blocks(self.kernel, &surplus, na, n_exo);
        let beta = self.model.beta();
        for (x, row) in out.chunks_exact_mut(na).enumerate() {
            let e = x % n_exo;
            for (a, o) in row.iter_mut().enumerate() {
                *o = self.c[x * na + a] + beta * (g[a * n_exo + e] - g[e]);
            }
        }
    }
}

impl DifferentiableMap for EulerMap<'_> {
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]) {
        let s = self.model.space();
        let na = s.n_actions();
        let n_exo = s.n_exo();
        let mut p = vec![0.0; na];
        let ds: Vec<f64> = y
            .chunks_exact(na)
            .zip(d.chunks_exact(na))
            .map(|(yx, dx)| {
                logit_ccp_into(yx, &mut p);
                p.iter().zip(dx).map(|(a, b)| a * b).sum()
            })
            .collect();
        let g = lag_blocks(self.kernel, &ds, na, n_exo);
        let beta = self.model.beta();
        for (x, row) in out.chunks_exact_mut(na).enumerate() {
            let e = x % n_exo;
            for (a, o) in row.iter_mut().enumerate() {
                *o = beta * (g[a * n_exo + e] - g[e]);
            }
        }
    }
}
