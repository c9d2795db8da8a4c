//! Smallest eigenpairs of a sparse symmetric positive semi-definite matrix.
//!
//! Chebyshev-filtered subspace iteration: a block of `m` plus guard vectors
//! is repeatedly passed through a polynomial that amplifies the low end of
//! the spectrum, then Rayleigh-Ritz on the block. Small problems go straight
//! to the dense solver.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::{axpy, dot, norm, symmetric_eigen, Mat};
use super::{gemm_nn, gemm_tn, EigenBasis};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

pub const DEFAULT_EIG_SEED: u64 = 0x005e_ed0f_1a9c;

#[derive(Debug, Clone, PartialEq)]
pub struct EigOptions {
    /// Residual target `|A q - lambda q| <= tol max(1, lambda)`.
    pub tol: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Extra block columns beyond `m`; `None` picks `max(m/4, 10)`.
    pub guard: Option<usize>,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self { tol: 1e-6, seed: DEFAULT_EIG_SEED, max_iter: 150, guard: None }
    }
}

pub fn smallest_eigs(a: &CsrMatrix, m: usize, eig_tol: f64) -> Result<EigenBasis> {
    smallest_eigs_with(a, m, &EigOptions { tol: eig_tol, ..EigOptions::default() })
}

pub fn smallest_eigs_with(a: &CsrMatrix, m: usize, opts: &EigOptions) -> Result<EigenBasis> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(Error::InvalidParam("eigensolver needs a square matrix".into()));
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParam(alloc::format!("need 1 <= m <= N, got m={m}, N={n}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParam("eig_tol must be positive".into()));
    }
    let p = (m + opts.guard.unwrap_or((m / 4).max(10))).min(n);
    if 2 * p >= n || n <= 64 {
        return dense_eigs(a, m);
    }
    FilteredIteration::new(a, m, p, opts).run()
}

fn dense_eigs(a: &CsrMatrix, m: usize) -> Result<EigenBasis> {
    let n = a.n_rows();
    // Symmetric, so the row-major dense copy is also column-major.
    let eig = symmetric_eigen(&Mat::from_col_major(n, n, a.to_dense()));
    let mut vectors = eig.vectors.into_data();
    vectors.truncate(n * m);
    for col in vectors.chunks_mut(n) {
        fix_sign(col);
    }
    EigenBasis::new(n, eig.values[..m].to_vec(), vectors)
}

/// Makes the largest-magnitude entry positive (first one on ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

struct FilteredIteration<'a> {
    a: &'a CsrMatrix,
    n: usize,
    m: usize,
    p: usize,
    tol: f64,
    max_iter: usize,
    upper: f64,
    rng: ChaCha8Rng,
}

impl<'a> FilteredIteration<'a> {
    fn new(a: &'a CsrMatrix, m: usize, p: usize, opts: &EigOptions) -> Self {
        Self {
            a,
            n: a.n_rows(),
            m,
            p,
            tol: opts.tol,
            max_iter: opts.max_iter,
            upper: a.gershgorin_bound() * 1.001 + 1e-12,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
        }
    }

    fn run(mut self) -> Result<EigenBasis> {
        let (n, p, m) = (self.n, self.p, self.m);
        let mut v: Vec<f64> = (0..n * p).map(|_| self.rng.random::<f64>() - 0.5).collect();
        self.orthonormalize(&mut v, 0);
        let (mut v, mut theta) = self.rayleigh_ritz(v);
        // Interlacing: the largest Ritz value bounds lambda_p from above.
        let mut cut = theta[p - 1].min(self.upper * 0.5);
        let mut converged = 0;
        let mut residuals = vec![f64::INFINITY; m];

        for iter in 0..self.max_iter {
            self.filter(&mut v, cut);
            for col in v.chunks_mut(n) {
                let s = norm(col);
                if s > 0.0 && s.is_finite() {
                    col.iter_mut().for_each(|x| *x /= s);
                }
            }
            let (nv, nt) = self.rayleigh_ritz(v);
            v = nv;
            theta = nt;
            cut = theta[p - 1];

            self.residuals(&v, &theta, &mut residuals);
            converged = residuals.iter().take_while(|&&r| r <= self.tol).count();
            log::debug!(
                "eigs iter {iter}: converged {converged}/{m}, cut {cut:.4e}, worst residual {:.3e}",
                residuals.iter().cloned().fold(0.0, f64::max)
            );
            if converged == m {
                break;
            }
        }

        v.truncate(n * m);
        theta.truncate(m);
        for col in v.chunks_mut(n) {
            fix_sign(col);
        }
        let basis = EigenBasis::new(n, theta, v)?;
        if converged == m {
            Ok(basis)
        } else {
            Err(Error::EigNotConverged {
                requested: m,
                converged,
                partial: Box::new(basis.truncated(converged)),
            })
        }
    }

    fn spmm(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.a.mul_block_into(x, x.len() / self.n, &mut y);
        y
    }

    // Degree chosen so the polynomial amplifies 0 over the damped interval
    // [cut, upper] by about 1e4.
    fn filter(&self, v: &mut [f64], cut: f64) {
        let n = self.n;
        let upper = self.upper;
        let cut = cut.clamp(1e-6 * upper, 0.95 * upper);
        let e = (upper - cut) / 2.0;
        let c = (upper + cut) / 2.0;
        let slope = (c / e).acosh();
        let degree = ((1e4f64.acosh() / slope).ceil() as usize).clamp(6, 400);
        let sigma0 = e / (0.0 - c);
        let mut prev = vec![0.0; n];
        let mut cur = vec![0.0; n];
        let mut next = vec![0.0; n];
        for x in v.chunks_mut(n) {
            // Scaled three-term recurrence; keeps the filtered vector O(1).
            let mut sigma = sigma0;
            self.a.mul_vec_into(x, &mut cur);
            for i in 0..n {
                cur[i] = (cur[i] - c * x[i]) * sigma / e;
            }
            prev.copy_from_slice(x);
            for _ in 1..degree {
                let sigma_new = 1.0 / (2.0 / sigma0 - sigma);
                self.a.mul_vec_into(&cur, &mut next);
                let s1 = 2.0 * sigma_new / e;
                let s2 = sigma * sigma_new;
                for i in 0..n {
                    next[i] = s1 * (next[i] - c * cur[i]) - s2 * prev[i];
                }
                core::mem::swap(&mut prev, &mut cur);
                core::mem::swap(&mut cur, &mut next);
                sigma = sigma_new;
            }
            x.copy_from_slice(&cur);
        }
    }

    /// Rayleigh-Ritz on span(y). Uses the Cholesky factor of the Gram matrix
    /// when it is well conditioned, otherwise orthonormalizes explicitly.
    fn rayleigh_ritz(&mut self, mut y: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
        let (n, p) = (self.n, self.p);
        let g = Mat::from_col_major(p, p, gemm_tn(&y, &y, n, p, p));
        let r = match cholesky_upper(&g) {
            Some(r) if min_max_diag(&r) > 1e-6 => r,
            _ => {
                self.orthonormalize(&mut y, 0);
                Mat::identity(p)
            }
        };
        let w = self.spmm(&y);
        let h = gemm_tn(&y, &w, n, p, p);
        drop(w);
        // H' = R^{-T} H R^{-1}
        let mut x = Mat::from_col_major(p, p, h);
        right_solve_upper(&mut x, &r);
        let mut xt = x.transpose();
        right_solve_upper(&mut xt, &r);
        let mut hp = xt.transpose();
        for c in 0..p {
            for rr in 0..c {
                let s = 0.5 * (hp[(rr, c)] + hp[(c, rr)]);
                hp[(rr, c)] = s;
                hp[(c, rr)] = s;
            }
        }
        let eig = symmetric_eigen(&hp);
        let mut coeff = eig.vectors;
        left_solve_upper(&r, &mut coeff);
        let v = gemm_nn(&y, coeff.data(), n, p, p);
        (v, eig.values)
    }

    fn residuals(&self, v: &[f64], theta: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut y = vec![0.0; n];
        for (j, r) in out.iter_mut().enumerate() {
            let q = &v[j * n..(j + 1) * n];
            self.a.mul_vec_into(q, &mut y);
            axpy(-theta[j], q, &mut y);
            *r = norm(&y) / theta[j].max(1.0) / norm(q).max(f64::MIN_POSITIVE);
        }
    }

    /// Two-pass Gram-Schmidt of columns `from..p` (earlier columns are
    /// assumed orthonormal); dependent columns are replaced by fresh random
    /// vectors.
    fn orthonormalize(&mut self, v: &mut [f64], from: usize) {
        let (n, p) = (self.n, self.p);
        let mut j = from;
        let mut attempts = 0;
        while j < p {
            let (done, rest) = v.split_at_mut(j * n);
            let col = &mut rest[..n];
            let n0 = norm(col);
            if n0 > 0.0 && n0.is_finite() {
                col.iter_mut().for_each(|x| *x /= n0);
                for _ in 0..2 {
                    for q in done.chunks(n) {
                        let c = dot(q, col);
                        axpy(-c, q, col);
                    }
                }
                let r = norm(col);
                if r > 1e-8 {
                    col.iter_mut().for_each(|x| *x /= r);
                    j += 1;
                    attempts = 0;
                    continue;
                }
            }
            attempts += 1;
            assert!(attempts < 100, "cannot extend an orthonormal block of {j} in dimension {n}");
            for x in col.iter_mut() {
                *x = self.rng.random::<f64>() - 0.5;
            }
        }
    }
}

fn min_max_diag(r: &Mat) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..r.rows() {
        lo = lo.min(r[(i, i)].abs());
        hi = hi.max(r[(i, i)].abs());
    }
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

/// Upper `R` with `G = R^T R`, or `None` if `G` is not numerically SPD.
fn cholesky_upper(g: &Mat) -> Option<Mat> {
    let p = g.rows();
    let mut r = Mat::zeros(p, p);
    for j in 0..p {
        for i in 0..=j {
            let s = g[(i, j)] - dot(&r.col(i)[..i], &r.col(j)[..i]);
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                r[(j, j)] = s.sqrt();
            } else {
                r[(i, j)] = s / r[(i, i)];
            }
        }
    }
    Some(r)
}

/// `X := X R^{-1}` for upper-triangular `R`.
fn right_solve_upper(x: &mut Mat, r: &Mat) {
    let rows = x.rows();
    let p = r.rows();
    let mut col = vec![0.0; rows];
    for j in 0..p {
        col.copy_from_slice(x.col(j));
        for i in 0..j {
            let rij = r[(i, j)];
            if rij != 0.0 {
                axpy(-rij, x.col(i), &mut col);
            }
        }
        let d = r[(j, j)];
        let dst = x.col_mut(j);
        for (o, c) in dst.iter_mut().zip(&col) {
            *o = c / d;
        }
    }
}

/// `Z := R^{-1} Z` for upper-triangular `R`.
fn left_solve_upper(r: &Mat, z: &mut Mat) {
    let p = r.rows();
    for j in 0..z.cols() {
        let col = z.col_mut(j);
        for k in (0..p).rev() {
            col[k] /= r[(k, k)];
            let ck = col[k];
            if ck != 0.0 {
                axpy(-ck, &r.col(k)[..k], &mut col[..k]);
            }
        }
    }
}
