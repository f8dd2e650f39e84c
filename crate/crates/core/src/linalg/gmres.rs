use super::{all_finite, dot, norm2, LinearOperator, SolverReport};
use crate::clock::Stopwatch;
use crate::{Error, Result};

/// Unrestarted GMRES with at most `q` Arnoldi steps from the warm start `y0`.
///
/// The least-squares problem on the Hessenberg matrix is reduced with Givens
/// rotations, so the residual 2-norm is known after every step and is used for
/// the `tol` test. A zero subdiagonal (lucky breakdown) ends the iteration and
/// counts as convergence. `q` is capped at the dimension.
pub fn gmres(
    a: &dyn LinearOperator,
    b: &[f64],
    y0: &[f64],
    q: usize,
    tol: f64,
) -> Result<(Vec<f64>, SolverReport)> {
    let watch = Stopwatch::start();
    let n = a.dim();
    if b.len() != n {
        return Err(Error::dims("GMRES right-hand side", n, b.len()));
    }
    if y0.len() != n {
        return Err(Error::dims("GMRES initial guess", n, y0.len()));
    }
    if q == 0 {
        return Err(Error::InvalidInput("GMRES needs q >= 1".into()));
    }
    if !all_finite(b) || !all_finite(y0) {
        return Err(Error::InvalidInput("non-finite entries in GMRES inputs".into()));
    }

    let mut r = vec![0.0; n];
    a.apply(y0, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let rho0 = norm2(&r);
    let mut report = SolverReport {
        final_residual: rho0,
        ..Default::default()
    };
    if rho0 == 0.0 || rho0 <= tol {
        report.converged = true;
        report.wall_time = watch.seconds();
        return Ok((y0.to_vec(), report));
    }

    let m = q.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    basis.push(r.iter().map(|x| x / rho0).collect());
    // Column j of the Hessenberg matrix lives in h[j], length j + 2.
    let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut cs: Vec<f64> = Vec::with_capacity(m);
    let mut sn: Vec<f64> = Vec::with_capacity(m);
    let mut g = vec![0.0; m + 1];
    g[0] = rho0;

    let mut w = vec![0.0; n];
    let mut steps = 0;
    let mut breakdown = false;
    for j in 0..m {
        a.apply(&basis[j], &mut w);
        let w_norm_before = norm2(&w);
        let mut col = vec![0.0; j + 2];
        // Modified Gram-Schmidt with one reorthogonalization pass.
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(v, &w);
                col[i] += hij;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= hij * vk;
                }
            }
        }
        let h_next = norm2(&w);
        col[j + 1] = h_next;

        for i in 0..j {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let denom = col[j].hypot(col[j + 1]);
        if denom == 0.0 {
            // A maps the Krylov space into the span of earlier directions with
            // a zero pivot: no further progress is possible.
            break;
        }
        let (c, s) = (col[j] / denom, col[j + 1] / denom);
        col[j] = denom;
        col[j + 1] = 0.0;
        cs.push(c);
        sn.push(s);
        g[j + 1] = -s * g[j];
        g[j] *= c;
        h.push(col);

        steps = j + 1;
        let residual = g[j + 1].abs();
        report.history.push(residual);
        report.final_residual = residual;

        if !residual.is_finite() {
            return Err(Error::Divergence { iteration: steps });
        }
        if h_next <= 1e-14 * w_norm_before.max(f64::MIN_POSITIVE) {
            breakdown = true;
            break;
        }
        if residual <= tol {
            break;
        }
        if j + 1 < m {
            basis.push(w.iter().map(|x| x / h_next).collect());
        }
    }

    // Back substitution on the rotated triangle.
    let mut coeffs = vec![0.0; steps];
    for i in (0..steps).rev() {
        let mut s = g[i];
        for k in i + 1..steps {
            s -= h[k][i] * coeffs[k];
        }
        coeffs[i] = s / h[i][i];
    }
    let mut y = y0.to_vec();
    for (c, v) in coeffs.iter().zip(&basis) {
        for (yi, vi) in y.iter_mut().zip(v) {
            *yi += c * vi;
        }
    }
    if !all_finite(&y) {
        return Err(Error::Divergence { iteration: steps });
    }

    report.iterations = steps;
    report.converged = breakdown || report.final_residual <= tol;
    report.wall_time = watch.seconds();
    Ok((y, report))
}
