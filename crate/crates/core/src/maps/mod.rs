//! Fixed-point mappings of the dynamic model and the truncated solver `Γ^q`
//! that advances their nuisance blocks inside the outer EM loop.

pub mod bellman;
pub mod epl;
pub mod euler;
pub mod pv;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::linalg::{
    anderson_accelerate, gmres, newton_kantorovich, successive_approx, DifferentiableMap, FixedPointMap,
    LinearOperator, NewtonOptions, SolverReport,
};
use crate::{Error, Result};

pub use bellman::BellmanMap;
pub use epl::{EplLinearization, EplMap};
pub use euler::{check_euler_structure, EulerMap};
pub use pv::{combine_components, policy_valuation_system, w_components_system, w_rhs, PolicyOperator};

/// Which auxiliary object an estimation method carries between outer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NuisanceBlock {
    /// Integrated value function `V(x)` per firm.
    ValueFunction,
    /// Value-function components `W_ℓ`, `W_P` with `V = Σ θ_ℓ W_ℓ + W_P`.
    WComponents,
    /// Differences `v(x,a) − v(x,0)` of conditional values.
    CondValueDiff,
    /// Stacked conditional values `v(x,a)` of all firms.
    CondValues,
}

/// Fixed-point problem underlying a nuisance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mapping {
    PolicyValuation,
    Bellman,
    Euler,
    Epl,
}

impl Mapping {
    /// Whether the solution is affine in θ, so that `d_θ + 1` θ-free systems
    /// can be advanced once per outer iteration instead of inside the M-step.
    pub fn is_theta_separable(self, linear_utility: bool) -> bool {
        linear_utility && matches!(self, Mapping::PolicyValuation | Mapping::Epl)
    }

    pub fn nuisance_block(self, linear_utility: bool) -> NuisanceBlock {
        match self {
            Mapping::PolicyValuation if linear_utility => NuisanceBlock::WComponents,
            Mapping::PolicyValuation | Mapping::Bellman => NuisanceBlock::ValueFunction,
            Mapping::Euler => NuisanceBlock::CondValueDiff,
            Mapping::Epl => NuisanceBlock::CondValues,
        }
    }
}

/// Inner algorithm applied by `Γ^q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InnerAlgorithm {
    /// Successive approximation.
    Sa,
    Gmres,
    Newton,
    Anderson,
}

/// Number of inner steps `q` per outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "TruncationRepr", into = "TruncationRepr")]
pub enum Truncation {
    Steps(usize),
    /// Iterate to the inner tolerance, with a safety cap.
    Converge,
}

impl Truncation {
    /// Step budget for a problem of dimension `dim`.
    pub fn budget(self, algorithm: InnerAlgorithm, dim: usize) -> usize {
        match self {
            Truncation::Steps(q) => q,
            Truncation::Converge => match algorithm {
                InnerAlgorithm::Gmres => dim.max(1),
                InnerAlgorithm::Newton => 100 * dim.max(1),
                InnerAlgorithm::Sa | InnerAlgorithm::Anderson => (100 * dim).max(CONVERGE_MIN_STEPS),
            },
        }
    }

    pub fn is_converge(self) -> bool {
        self == Truncation::Converge
    }
}

impl fmt::Display for Truncation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Truncation::Steps(q) => write!(f, "{q}"),
            Truncation::Converge => f.write_str("inf"),
        }
    }
}

impl FromStr for Truncation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "Inf" | "INF" | "infinity" | "∞" => Ok(Truncation::Converge),
            t => match t.parse::<usize>() {
                Ok(q) if q >= 1 => Ok(Truncation::Steps(q)),
                _ => Err(Error::Config(format!("truncation must be a positive integer or \"inf\", got {s:?}"))),
            },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TruncationRepr {
    Steps(usize),
    Text(String),
}

impl TryFrom<TruncationRepr> for Truncation {
    type Error = Error;

    fn try_from(r: TruncationRepr) -> Result<Self> {
        match r {
            TruncationRepr::Steps(q) => format!("{q}").parse(),
            TruncationRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Truncation> for TruncationRepr {
    fn from(t: Truncation) -> Self {
        match t {
            Truncation::Steps(q) => TruncationRepr::Steps(q),
            Truncation::Converge => TruncationRepr::Text("inf".into()),
        }
    }
}

/// Smallest step cap of first-order methods iterating to convergence; enough
/// for successive approximation to gain eight digits at `β = 0.99999`.
pub const CONVERGE_MIN_STEPS: usize = 2_000_000;

/// Default inner tolerance used when iterating to convergence.
pub const INNER_TOL: f64 = 1e-8;

/// The truncated inner solver `Γ^q`: `q` steps of one algorithm from a warm
/// start, or iteration to `tol` when the truncation is [`Truncation::Converge`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma {
    pub algorithm: InnerAlgorithm,
    pub truncation: Truncation,
    pub tol: f64,
    pub anderson_memory: usize,
    pub newton: NewtonOptions,
}

/// Builds `Γ^q` with default tolerances.
pub fn make_gamma(algorithm: InnerAlgorithm, truncation: Truncation) -> Gamma {
    Gamma {
        algorithm,
        truncation,
        tol: INNER_TOL,
        anderson_memory: 5,
        newton: NewtonOptions::default(),
    }
}

// `y ↦ y + b − A·y`, whose fixed point solves `A·y = b`.
struct LinearSaMap<'a> {
    a: &'a dyn LinearOperator,
    b: &'a [f64],
}

impl FixedPointMap for LinearSaMap<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        self.a.apply(y, out);
        for ((o, yi), bi) in out.iter_mut().zip(y).zip(self.b) {
            *o = yi + bi - *o;
        }
    }
}

impl Gamma {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn budget(&self, dim: usize) -> usize {
        self.truncation.budget(self.algorithm, dim)
    }

    // Iterating to convergence must actually converge.
    fn finish(&self, out: Result<(Vec<f64>, SolverReport)>) -> Result<(Vec<f64>, SolverReport)> {
        match out {
            Ok((_, rep)) if self.truncation.is_converge() && !rep.converged => Err(Error::InnerNotConverged {
                iterations: rep.iterations,
                residual: rep.final_residual,
            }),
            other => other,
        }
    }

    fn incompatible(&self, what: &str) -> Error {
        Error::Config(format!("inner algorithm {:?} cannot be applied to {what}", self.algorithm))
    }

    /// Advances the linear system `A·y = b` from `y0`.
    pub fn solve_linear(&self, a: &dyn LinearOperator, b: &[f64], y0: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let q = self.budget(a.dim());
        self.finish(match self.algorithm {
            InnerAlgorithm::Gmres => gmres(a, b, y0, q, self.tol),
            InnerAlgorithm::Sa => {
                check_rhs(a.dim(), b)?;
                successive_approx(&LinearSaMap { a, b }, y0, q, self.tol)
            }
            InnerAlgorithm::Anderson => {
                check_rhs(a.dim(), b)?;
                anderson_accelerate(&LinearSaMap { a, b }, y0, q, self.anderson_memory, self.tol)
            }
            InnerAlgorithm::Newton => Err(self.incompatible("a linear system")),
        })
    }

    /// Advances several right-hand sides sharing one operator. The report
    /// sums iterations and requires every solve to converge.
    pub fn solve_linear_many(
        &self,
        a: &dyn LinearOperator,
        rhs: &[Vec<f64>],
        y0: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, SolverReport)> {
        if rhs.len() != y0.len() {
            return Err(Error::dims("warm starts", rhs.len(), y0.len()));
        }
        let mut report = SolverReport::empty_converged();
        let mut out = Vec::with_capacity(rhs.len());
        for (b, y) in rhs.iter().zip(y0) {
            let (sol, r) = self.solve_linear(a, b, y)?;
            report.absorb(&r);
            out.push(sol);
        }
        Ok((out, report))
    }

    /// Advances a nonlinear map that offers no Jacobian.
    pub fn solve_map(&self, g: &dyn FixedPointMap, y0: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let q = self.budget(g.dim());
        self.finish(match self.algorithm {
            InnerAlgorithm::Sa => successive_approx(g, y0, q, self.tol),
            InnerAlgorithm::Anderson => anderson_accelerate(g, y0, q, self.anderson_memory, self.tol),
            InnerAlgorithm::Gmres => Err(self.incompatible("a nonlinear map")),
            InnerAlgorithm::Newton => Err(self.incompatible("a map without a Jacobian")),
        })
    }

    /// Advances a nonlinear map with Jacobian-vector products.
    pub fn solve_diff_map(&self, g: &dyn DifferentiableMap, y0: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let q = self.budget(g.dim());
        self.finish(match self.algorithm {
            InnerAlgorithm::Newton => newton_kantorovich(g, y0, q, self.tol, self.newton),
            InnerAlgorithm::Sa => successive_approx(g, y0, q, self.tol),
            InnerAlgorithm::Anderson => anderson_accelerate(g, y0, q, self.anderson_memory, self.tol),
            InnerAlgorithm::Gmres => Err(self.incompatible("a nonlinear map")),
        })
    }
}

fn check_rhs(n: usize, b: &[f64]) -> Result<()> {
    if b.len() != n {
        return Err(Error::dims("right-hand side", n, b.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
