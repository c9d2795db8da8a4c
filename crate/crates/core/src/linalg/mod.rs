//! Numeric kernels: dense helpers, conjugate gradients and the smallest
//! eigenpair solver.

pub mod dense;
mod eigs;

use alloc::vec;
use alloc::vec::Vec;


pub use eigs::{smallest_eigs, smallest_eigs_with, EigOptions, DEFAULT_EIG_SEED};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use dense::{axpy, dot, norm};

/// Symmetric operator `y = A x` with a known diagonal.
pub trait LinearOperator {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for CsrMatrix {
    fn len(&self) -> usize {
        self.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y)
    }

    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

/// `A + shift I` without materializing it.
#[derive(Debug, Clone, Copy)]
pub struct Shifted<'a> {
    pub matrix: &'a CsrMatrix,
    pub shift: f64,
}

impl LinearOperator for Shifted<'_> {
    fn len(&self) -> usize {
        self.matrix.n_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.mul_vec_into(x, y);
        if self.shift != 0.0 {
            axpy(self.shift, x, y);
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().into_iter().map(|d| d + self.shift).collect()
    }
}

pub const CG_TOL: f64 = 1e-8;

/// Default iteration cap, `10 N`.
pub fn cg_default_max_iter(n: usize) -> usize {
    10 * n.max(1)
}

/// Jacobi-preconditioned conjugate gradients on each column of the
/// column-major `N x k` right-hand side.
///
/// Stops a column once `|r| <= tol |b|`. If any column hits `max_iter`
/// first, [`Error::NotConverged`] carries every column's relative residual.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    a: &A,
    rhs: &[f64],
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = a.len();
    if rhs.len() != n * k {
        return Err(Error::DimsMismatch { expected: vec![n, k], found: vec![rhs.len()] });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParam("CG tolerance must be positive".into()));
    }
    let inv_diag: Vec<f64> =
        a.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n * k];
    let mut residuals = vec![0.0; k];
    let mut failed = false;
    let (mut r, mut z, mut p, mut q) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..k {
        let b = &rhs[j * n..(j + 1) * n];
        let xj = &mut x[j * n..(j + 1) * n];
        let bnorm = norm(b);
        if bnorm == 0.0 {
            continue;
        }
        r.copy_from_slice(b);
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        let mut rel = 1.0;
        let mut it = 0;
        while it < max_iter {
            a.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                break;
            }
            let alpha = rz / pq;
            axpy(alpha, &p, xj);
            axpy(-alpha, &q, &mut r);
            it += 1;
            rel = norm(&r) / bnorm;
            if rel <= tol {
                break;
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        residuals[j] = rel;
        if !(rel <= tol) {
            failed = true;
        }
    }
    if failed {
        log::warn!("CG stopped above tolerance: {residuals:?}");
        return Err(Error::NotConverged { residuals });
    }
    Ok(x)
}

/// `m` orthonormal vectors of length `n` with their (ascending) values.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    n: usize,
    values: Vec<f64>,
    // column-major n x m
    vectors: Vec<f64>,
}

impl EigenBasis {
    pub fn new(n: usize, values: Vec<f64>, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != n * values.len() {
            return Err(Error::DimsMismatch {
                expected: vec![n, values.len()],
                found: vec![vectors.len()],
            });
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParam("eigenvalues must be ascending".into()));
        }
        Ok(Self { n, values, vectors })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, values: Vec::new(), vectors: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.vectors[j * self.n..(j + 1) * self.n]
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.values, self.vectors)
    }

    /// The first `m` pairs.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.m());
        Self {
            n: self.n,
            values: self.values[..m].to_vec(),
            vectors: self.vectors[..m * self.n].to_vec(),
        }
    }

    /// `max |Q^T Q - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.m();
        let g = gemm_tn(&self.vectors, &self.vectors, self.n, m, m);
        let mut worst = 0.0f64;
        for c in 0..m {
            for r in 0..m {
                let want = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[c * m + r] - want).abs());
            }
        }
        worst
    }

    /// Per-pair `|A q - lambda q| / max(1, lambda)`.
    pub fn relative_residuals<A: LinearOperator + ?Sized>(&self, a: &A) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        (0..self.m())
            .map(|j| {
                let q = self.column(j);
                a.apply(q, &mut y);
                axpy(-self.values[j], q, &mut y);
                norm(&y) / self.values[j].max(1.0)
            })
            .collect()
    }
}

/// `A^T B` for column-major `A` (`n x ca`) and `B` (`n x cb`); result `ca x cb`.
pub fn gemm_tn(a: &[f64], b: &[f64], n: usize, ca: usize, cb: usize) -> Vec<f64> {
    let mut c = vec![0.0; ca * cb];
    if n == 0 || ca == 0 || cb == 0 {
        return c;
    }
    debug_assert!(a.len() >= n * ca && b.len() >= n * cb);
    // SAFETY: the slices hold the addressed elements for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            ca,
            n,
            cb,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            c.as_mut_ptr(),
            1,
            ca as isize,
        );
    }
    c
}

/// `A B` for column-major `A` (`n x k`) and `B` (`k x cb`); result `n x cb`.
pub fn gemm_nn(a: &[f64], b: &[f64], n: usize, k: usize, cb: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * cb];
    gemm_nn_into(a, b, n, k, cb, 0.0, &mut c);
    c
}

/// `C = A B + beta C`, shapes as in [`gemm_nn`].
pub fn gemm_nn_into(a: &[f64], b: &[f64], n: usize, k: usize, cb: usize, beta: f64, c: &mut [f64]) {
    if n == 0 || cb == 0 {
        return;
    }
    if k == 0 {
        c[..n * cb].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(a.len() >= n * k && b.len() >= k * cb && c.len() >= n * cb);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            cb,
            1.0,
            a.as_ptr(),
            1,
            n as isize,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            1,
            n as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_identity_and_diagonal() {
        let i = CsrMatrix::identity(3);
        let x = cg_solve(&i, &[1.0, -2.0, 3.0], 1, CG_TOL, 30).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0]);

        let d = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 3.0)]);
        let x = cg_solve(&d, &[2.0, 3.0], 1, CG_TOL, 20).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 2.0)],
        );
        match cg_solve(&a, &[1.0, 2.0, 3.0], 1, 1e-12, 1) {
            Err(Error::NotConverged { residuals }) => assert_eq!(residuals.len(), 1),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn gemm_shapes() {
        // A = [[1,2],[3,4],[5,6]] column-major.
        let a = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0];
        let ata = gemm_tn(&a, &a, 3, 2, 2);
        assert_eq!(ata, vec![35.0, 44.0, 44.0, 56.0]);
        let b = [1.0, 1.0];
        assert_eq!(gemm_nn(&a, &b, 3, 2, 1), vec![3.0, 7.0, 11.0]);
    }
}
