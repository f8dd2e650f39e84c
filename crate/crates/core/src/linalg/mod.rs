//! Matrix-free linear algebra and the truncated inner algorithms.
//!
//! Everything here works on flat `f64` slices. Operators never mutate their
//! inputs, and every solver is a pure function of its arguments.

pub mod fixed_point;
pub mod gmres;
pub mod kron;
pub mod spectral;

use serde::{Deserialize, Serialize};

pub use fixed_point::{
    anderson_accelerate, newton_kantorovich, successive_approx, DifferentiableMap, FixedPointMap,
    NewtonOptions,
};
pub use gmres::gmres;
pub use kron::{kron_matvec, KroneckerOperator};
pub use spectral::{bb_step_size, initial_step, BbStep};

/// A square linear map applied without materializing its matrix.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// Writes `A·x` into `out`. Both slices have length `dim()`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> crate::Result<Self> {
        if data.len() != n * n {
            return Err(crate::Error::dims("dense matrix entries", n * n, data.len()));
        }
        Ok(DenseMatrix { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        DenseMatrix { n, data }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        DenseMatrix { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }
}

/// Adapts a closure into a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Outcome of one inner-solver invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
    /// Residual after each iteration (GMRES: 2-norm estimate; fixed-point
    /// methods: sup-norm step).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

impl SolverReport {
    /// Folds `other` into an aggregate: iterations add, histories concatenate,
    /// convergence requires both.
    pub fn absorb(&mut self, other: &SolverReport) {
        self.iterations += other.iterations;
        self.history.extend_from_slice(&other.history);
        self.final_residual = self.final_residual.max(other.final_residual);
        self.converged &= other.converged;
        self.wall_time += other.wall_time;
    }

    pub(crate) fn empty_converged() -> Self {
        SolverReport {
            converged: true,
            ..Default::default()
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Dense LU solve, used by exact baselines and test oracles.
pub fn dense_solve(a: &DenseMatrix, b: &[f64]) -> crate::Result<Vec<f64>> {
    let lu = a.to_nalgebra().lu();
    let rhs = nalgebra::DVector::from_column_slice(b);
    lu.solve(&rhs)
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| crate::Error::InvalidInput("singular matrix in dense solve".into()))
}

/// Materializes an operator column by column.
pub fn materialize(op: &dyn LinearOperator) -> DenseMatrix {
    let n = op.dim();
    let mut data = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
        e[j] = 0.0;
    }
    DenseMatrix { n, data }
}
