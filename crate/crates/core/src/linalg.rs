//! Small dense and tridiagonal kernels.

use crate::error::{Error, Result};

/// Cholesky factor `L` of a symmetric positive-definite tridiagonal matrix,
/// stored as its diagonal and subdiagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalCholesky {
    pub diag: Vec<f64>,
    pub sub: Vec<f64>,
}

impl TridiagonalCholesky {
    /// Factor the matrix with diagonal `a` and off-diagonal `b` (`b[i]` couples `i` and `i + 1`).
    pub fn factor(a: &[f64], b: &[f64]) -> Result<Self> {
        let n = a.len();
        if n == 0 || b.len() + 1 != n {
            return Err(Error::Dimension(format!("tridiagonal sizes {} and {}", a.len(), b.len())));
        }
        let mut diag = vec![0.0; n];
        let mut sub = vec![0.0; n - 1];
        for i in 0..n {
            let mut d = a[i];
            if i > 0 {
                sub[i - 1] = b[i - 1] / diag[i - 1];
                d -= sub[i - 1] * sub[i - 1];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite(format!("pivot {i} is {d}")));
            }
            diag[i] = d.sqrt();
        }
        Ok(Self { diag, sub })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `L^{-1} v` in place (forward substitution).
    pub fn solve_lower(&self, v: &mut [f64]) {
        for i in 0..v.len() {
            if i > 0 {
                v[i] -= self.sub[i - 1] * v[i - 1];
            }
            v[i] /= self.diag[i];
        }
    }

    /// `L^{-T} v` in place (back substitution).
    pub fn solve_upper(&self, v: &mut [f64]) {
        let n = v.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                v[i] -= self.sub[i] * v[i + 1];
            }
            v[i] /= self.diag[i];
        }
    }

    /// `L v` in place.
    pub fn mul_lower(&self, v: &mut [f64]) {
        for i in (0..v.len()).rev() {
            v[i] *= self.diag[i];
            if i > 0 {
                v[i] += self.sub[i - 1] * v[i - 1];
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Modified Gram-Schmidt with one reorthogonalization pass; returns orthonormal columns.
///
/// Columns that become numerically dependent are dropped.
pub fn orthonormalize(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    orthonormalize_in(columns, |v| v.to_vec()).0
}

/// Gram-Schmidt in the inner product `<a, b> = a^T M b` for SPD `M` given by
/// `apply_m`. Returns the orthonormal columns `q` and their images `M q`.
pub fn orthonormalize_in(columns: &[Vec<f64>], apply_m: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    let mut images: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    for c in columns {
        let original = dot(c, &apply_m(c)).max(0.0).sqrt();
        let mut v = c.clone();
        for _ in 0..2 {
            for (q, mq) in out.iter().zip(&images) {
                let p = dot(mq, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= p * qi;
                }
            }
        }
        let mut mv = apply_m(&v);
        let n = dot(&v, &mv).max(0.0).sqrt();
        if n > 1e-12 * original.max(f64::MIN_POSITIVE) {
            v.iter_mut().for_each(|x| *x /= n);
            mv.iter_mut().for_each(|x| *x /= n);
            out.push(v);
            images.push(mv);
        }
    }
    (out, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn tridiagonal_factor_matches_dense() {
        let a = [4.0, 5.0, 6.0, 3.0];
        let b = [-1.0, 2.0, -0.5];
        let f = TridiagonalCholesky::factor(&a, &b).unwrap();
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = a[i];
            if i < 3 {
                m[(i, i + 1)] = b[i];
                m[(i + 1, i)] = b[i];
            }
        }
        let dense = m.clone().cholesky().unwrap().l();
        for i in 0..4 {
            assert!((dense[(i, i)] - f.diag[i]).abs() < 1e-14);
            if i > 0 {
                assert!((dense[(i, i - 1)] - f.sub[i - 1]).abs() < 1e-14);
            }
        }
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut v = x.to_vec();
        f.mul_lower(&mut v);
        f.solve_lower(&mut v);
        for i in 0..4 {
            assert!((v[i] - x[i]).abs() < 1e-14);
        }
        let mut w = x.to_vec();
        f.solve_upper(&mut w);
        let lt = dense.transpose();
        let back = &lt * nalgebra::DVector::from_vec(w);
        for i in 0..4 {
            assert!((back[i] - x[i]).abs() < 1e-13);
        }
        assert!(matches!(TridiagonalCholesky::factor(&[1.0, 1.0], &[2.0]), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn gram_schmidt_yields_orthonormal_span() {
        let cols = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 1.0]];
        let q = orthonormalize(&cols);
        assert_eq!(q.len(), 2);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&q[i], &q[j]) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn weighted_gram_schmidt_is_orthonormal_in_the_metric() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let apply = |v: &[f64]| (&m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec();
        let cols = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let (q, mq) = orthonormalize_in(&cols, apply);
        assert_eq!(q.len(), 3);
        for i in 0..3 {
            assert_eq!(mq[i].len(), 3);
            for (a, b) in apply(&q[i]).iter().zip(&mq[i]) {
                assert!((a - b).abs() < 1e-14);
            }
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((dot(&q[i], &mq[j]) - e).abs() < 1e-14);
            }
        }
        // first column only rescaled: 1 / sqrt(4)
        assert!((q[0][0] - 0.5).abs() < 1e-15);
    }
}
