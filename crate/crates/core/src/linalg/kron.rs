use super::{DenseMatrix, LinearOperator};
use crate::{Error, Result};

/// `F_1 ⊗ F_2 ⊗ ... ⊗ F_K` applied mode by mode.
///
/// Index convention: the first factor is the most significant (slowest)
/// coordinate, matching the row-major layout of the dense Kronecker product.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerOperator {
    factors: Vec<DenseMatrix>,
    dim: usize,
}

impl KroneckerOperator {
    pub fn new(factors: Vec<DenseMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("Kronecker operator needs at least one factor".into()));
        }
        let dim = factors.iter().map(DenseMatrix::size).product();
        Ok(KroneckerOperator { factors, dim })
    }

    pub fn factors(&self) -> &[DenseMatrix] {
        &self.factors
    }

    pub fn factor_sizes(&self) -> Vec<usize> {
        self.factors.iter().map(DenseMatrix::size).collect()
    }

    /// True when every factor has rows summing to one within `tol`.
    pub fn is_row_stochastic(&self, tol: f64) -> bool {
        self.factors.iter().all(|f| {
            (0..f.size()).all(|i| {
                let row = f.row(i);
                row.iter().all(|&p| p >= -tol) && (row.iter().sum::<f64>() - 1.0).abs() <= tol
            })
        })
    }

    /// Entry `(row, col)` of the full product, computed from the factors.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let mut r = row;
        let mut c = col;
        let mut value = 1.0;
        for f in self.factors.iter().rev() {
            let l = f.size();
            value *= f.get(r % l, c % l);
            r /= l;
            c /= l;
        }
        value
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim);
        out.copy_from_slice(v);
        let mut scratch = vec![0.0; self.dim];
        let mut inner = self.dim;
        for f in &self.factors {
            let l = f.size();
            inner /= l;
            mode_product(f, out, &mut scratch, inner);
            out.copy_from_slice(&scratch);
        }
    }
}

impl LinearOperator for KroneckerOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out)
    }
}

// Contracts one tensor mode: `inner` is the stride of that mode.
fn mode_product(f: &DenseMatrix, src: &[f64], dst: &mut [f64], inner: usize) {
    let l = f.size();
    let block = l * inner;
    dst.iter_mut().for_each(|d| *d = 0.0);
    for (src_block, dst_block) in src.chunks_exact(block).zip(dst.chunks_exact_mut(block)) {
        for i in 0..l {
            let out_row = &mut dst_block[i * inner..(i + 1) * inner];
            for (j, &fij) in f.row(i).iter().enumerate() {
                if fij == 0.0 {
                    continue;
                }
                let in_row = &src_block[j * inner..(j + 1) * inner];
                for (o, x) in out_row.iter_mut().zip(in_row) {
                    *o += fij * x;
                }
            }
        }
    }
}

/// `(F_1 ⊗ ... ⊗ F_K) v` without forming the product.
pub fn kron_matvec(factors: &[DenseMatrix], v: &[f64]) -> Result<Vec<f64>> {
    let op = KroneckerOperator::new(factors.to_vec())?;
    if v.len() != op.dim {
        return Err(Error::dims("Kronecker matvec input", op.dim, v.len()));
    }
    let mut out = vec![0.0; op.dim];
    op.apply_into(v, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Explicit dense Kronecker product, the oracle for the mode-wise apply.
    fn dense_kron(factors: &[DenseMatrix]) -> DenseMatrix {
        let mut acc = DenseMatrix::identity(1);
        for f in factors {
            let (na, nb) = (acc.size(), f.size());
            acc = DenseMatrix::from_fn(na * nb, |i, j| {
                acc.get(i / nb, j / nb) * f.get(i % nb, j % nb)
            });
        }
        acc
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_factors_leave_vector_unchanged() {
        let eye = DenseMatrix::identity(2);
        let out = kron_matvec(&[eye.clone(), eye], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_factor_is_plain_matvec() {
        let swap = DenseMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(kron_matvec(&[swap], &[3.0, 7.0]).unwrap(), vec![7.0, 3.0]);
    }

    #[test]
    fn two_random_factors_match_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let factors = vec![random_matrix(&mut rng, 3), random_matrix(&mut rng, 3)];
        let v: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dense = dense_kron(&factors);
        let mut expected = vec![0.0; 9];
        dense.apply(&v, &mut expected);
        let got = kron_matvec(&factors, &v).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn all_shapes_up_to_three_factors_of_side_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..=3usize {
            for _ in 0..6 {
                let factors: Vec<_> =
                    (0..k)
                    .map(|_| {
                        let side = rng.random_range(1..=4);
                        random_matrix(&mut rng, side)
                    })
                    .collect();
                let dense = dense_kron(&factors);
                let n = dense.size();
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut expected = vec![0.0; n];
                dense.apply(&v, &mut expected);
                let scale = expected.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                let got = kron_matvec(&factors, &v).unwrap();
                for (g, e) in got.iter().zip(&expected) {
                    assert!((g - e).abs() <= 1e-12 * scale);
                }
                let op = KroneckerOperator::new(factors).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        assert!((op.entry(i, j) - dense.get(i, j)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn length_mismatch_names_both_sizes() {
        let eye = DenseMatrix::identity(3);
        let err = kron_matvec(&[eye.clone(), eye], &[1.0; 8]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 9") && msg.contains("got 8"), "{msg}");
    }

    #[test]
    fn stochastic_factors_preserve_ones() {
        let p = DenseMatrix::new(2, vec![0.3, 0.7, 0.9, 0.1]).unwrap();
        let q = DenseMatrix::new(3, vec![0.2, 0.5, 0.3, 0.0, 1.0, 0.0, 0.4, 0.4, 0.2]).unwrap();
        let op = KroneckerOperator::new(vec![p, q]).unwrap();
        assert!(op.is_row_stochastic(1e-12));
        let mut out = vec![0.0; 6];
        op.apply(&[1.0; 6], &mut out);
        assert!(out.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }
}
