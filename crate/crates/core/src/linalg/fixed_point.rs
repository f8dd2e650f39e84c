use super::{all_finite, gmres, norm2, sup_diff, sup_norm, FnOperator, SolverReport};
use crate::clock::Stopwatch;
use crate::{Error, Result};

/// A mapping `G: R^n -> R^n` whose fixed point `y = G(y)` is sought.
pub trait FixedPointMap {
    fn dim(&self) -> usize;
    fn apply(&self, y: &[f64], out: &mut [f64]);
}

/// A fixed-point map with a Jacobian-vector product `∇G(y)·d`.
pub trait DifferentiableMap: FixedPointMap {
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]);
}

impl<T: FixedPointMap + ?Sized> FixedPointMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        (**self).apply(y, out)
    }
}

impl<T: DifferentiableMap + ?Sized> DifferentiableMap for &T {
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]) {
        (**self).jacobian_apply(y, d, out)
    }
}

/// Closure-backed map, handy in tests and small examples.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnMap { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> FixedPointMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }
}

/// Closure-backed differentiable map.
pub struct FnDiffMap<F, J> {
    dim: usize,
    f: F,
    jac: J,
}

impl<F, J> FnDiffMap<F, J>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &[f64], &mut [f64]),
{
    pub fn new(dim: usize, f: F, jac: J) -> Self {
        FnDiffMap { dim, f, jac }
    }
}

impl<F, J> FixedPointMap for FnDiffMap<F, J>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }
}

impl<F, J> DifferentiableMap for FnDiffMap<F, J>
where
    F: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], &[f64], &mut [f64]),
{
    fn jacobian_apply(&self, y: &[f64], d: &[f64], out: &mut [f64]) {
        (self.jac)(y, d, out)
    }
}

fn check_start(map_dim: usize, y0: &[f64], q: usize) -> Result<()> {
    if y0.len() != map_dim {
        return Err(Error::dims("fixed-point initial guess", map_dim, y0.len()));
    }
    if q == 0 {
        return Err(Error::InvalidInput("inner iteration cap q must be at least 1".into()));
    }
    Ok(())
}

/// Applies `G` up to `q` times, stopping once the sup-norm step is `<= tol`.
pub fn successive_approx(
    g: &dyn FixedPointMap,
    y0: &[f64],
    q: usize,
    tol: f64,
) -> Result<(Vec<f64>, SolverReport)> {
    let watch = Stopwatch::start();
    check_start(g.dim(), y0, q)?;
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y.len()];
    let mut report = SolverReport {
        final_residual: f64::INFINITY,
        ..Default::default()
    };
    for k in 1..=q {
        g.apply(&y, &mut next);
        if !all_finite(&next) {
            return Err(Error::Divergence { iteration: k });
        }
        let step = sup_diff(&next, &y);
        std::mem::swap(&mut y, &mut next);
        report.iterations = k;
        report.final_residual = step;
        report.history.push(step);
        if step <= tol {
            break;
        }
    }
    report.converged = report.final_residual <= tol;
    report.wall_time = watch.seconds();
    Ok((y, report))
}

/// Type-II Anderson acceleration with a sliding window of `memory` past
/// residual differences.
///
/// Each iteration costs one evaluation of `G`. When the least-squares mixing
/// problem has condition number above `1e12` the step falls back to plain
/// successive approximation and the window is cleared. `memory == 0` is plain
/// successive approximation.
pub fn anderson_accelerate(
    g: &dyn FixedPointMap,
    y0: &[f64],
    q: usize,
    memory: usize,
    tol: f64,
) -> Result<(Vec<f64>, SolverReport)> {
    if memory == 0 {
        return successive_approx(g, y0, q, tol);
    }
    let watch = Stopwatch::start();
    check_start(g.dim(), y0, q)?;
    let n = y0.len();

    let mut gy = vec![0.0; n];
    g.apply(y0, &mut gy);
    if !all_finite(&gy) {
        return Err(Error::Divergence { iteration: 1 });
    }
    let mut f: Vec<f64> = gy.iter().zip(y0).map(|(a, b)| a - b).collect();
    let mut report = SolverReport::default();
    let mut residual = sup_norm(&f);
    report.iterations = 1;
    report.history.push(residual);

    let mut d_f: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut d_g: std::collections::VecDeque<Vec<f64>> = Default::default();
    let mut g_new = vec![0.0; n];

    while report.iterations < q && residual > tol {
        let mut y_new = gy.clone();
        if !d_f.is_empty() {
            match mixing_coefficients(&d_f, &f) {
                Some(gamma) => {
                    for (c, col) in gamma.iter().zip(&d_g) {
                        for (yi, gi) in y_new.iter_mut().zip(col) {
                            *yi -= c * gi;
                        }
                    }
                }
                None => {
                    d_f.clear();
                    d_g.clear();
                }
            }
        }
        g.apply(&y_new, &mut g_new);
        report.iterations += 1;
        if !all_finite(&g_new) || !all_finite(&y_new) {
            return Err(Error::Divergence { iteration: report.iterations });
        }
        let f_new: Vec<f64> = g_new.iter().zip(&y_new).map(|(a, b)| a - b).collect();
        d_f.push_back(f_new.iter().zip(&f).map(|(a, b)| a - b).collect());
        d_g.push_back(g_new.iter().zip(&gy).map(|(a, b)| a - b).collect());
        if d_f.len() > memory {
            d_f.pop_front();
            d_g.pop_front();
        }
        gy.copy_from_slice(&g_new);
        f = f_new;
        residual = sup_norm(&f);
        report.history.push(residual);
    }
    report.final_residual = residual;
    report.converged = residual <= tol;
    report.wall_time = watch.seconds();
    Ok((gy, report))
}

// Least-squares γ minimizing ‖f − ΔF γ‖₂, or None when ill-conditioned.
fn mixing_coefficients(d_f: &std::collections::VecDeque<Vec<f64>>, f: &[f64]) -> Option<Vec<f64>> {
    let n = f.len();
    let k = d_f.len();
    let mut data = Vec::with_capacity(n * k);
    for col in d_f {
        data.extend_from_slice(col);
    }
    let mat = nalgebra::DMatrix::from_column_slice(n, k, &data);
    let svd = mat.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || smax / smin > 1e12 {
        return None;
    }
    let rhs = nalgebra::DVector::from_column_slice(f);
    let gamma = svd.solve(&rhs, 0.0).ok()?;
    let gamma: Vec<f64> = gamma.iter().copied().collect();
    all_finite(&gamma).then_some(gamma)
}

/// Controls the inner GMRES solve of each Newton step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Absolute 2-norm tolerance floor for the linear solve.
    pub inner_tol: f64,
    /// Relative forcing term: the solve stops at `forcing * ‖rhs‖₂` if larger.
    pub forcing: f64,
    /// Cap on GMRES steps per Newton step (further capped by the dimension).
    pub inner_max: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            inner_tol: 0.0,
            forcing: 1e-9,
            inner_max: usize::MAX,
        }
    }
}

/// Newton–Kantorovich iteration `y ← y + d`, `(I − ∇G(y)) d = G(y) − y`,
/// with each linear system solved matrix-free by GMRES.
pub fn newton_kantorovich(
    g: &dyn DifferentiableMap,
    y0: &[f64],
    q: usize,
    tol: f64,
    opts: NewtonOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    let watch = Stopwatch::start();
    check_start(g.dim(), y0, q)?;
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut gy = vec![0.0; n];
    g.apply(&y, &mut gy);
    if !all_finite(&gy) {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut report = SolverReport::default();
    let mut residual = sup_diff(&gy, &y);
    let zeros = vec![0.0; n];

    while report.iterations < q && residual > tol {
        let rhs: Vec<f64> = gy.iter().zip(&y).map(|(a, b)| a - b).collect();
        let rhs_norm = norm2(&rhs);
        let y_ref = &y;
        let op = FnOperator::new(n, |d: &[f64], out: &mut [f64]| {
            g.jacobian_apply(y_ref, d, out);
            for (o, di) in out.iter_mut().zip(d) {
                *o = di - *o;
            }
        });
        let inner_tol = opts.inner_tol.max(opts.forcing * rhs_norm);
        let (d, inner) = gmres(&op, &rhs, &zeros, opts.inner_max, inner_tol)?;
        if !inner.converged && !(inner.final_residual < rhs_norm) {
            return Err(Error::SingularJacobian {
                iteration: report.iterations,
                residual,
            });
        }
        for (yi, di) in y.iter_mut().zip(&d) {
            *yi += di;
        }
        report.iterations += 1;
        g.apply(&y, &mut gy);
        if !all_finite(&gy) {
            return Err(Error::Divergence { iteration: report.iterations });
        }
        residual = sup_diff(&gy, &y);
        report.history.push(residual);
    }
    report.final_residual = residual;
    report.converged = residual <= tol;
    report.wall_time = watch.seconds();
    Ok((y, report))
}
