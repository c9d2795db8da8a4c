//! Small dense kernels: column-major matrices, LU with partial pivoting, a
//! symmetric eigensolver and Gram-Schmidt orthonormalization.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = data[r * cols + c];
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for c in 0..self.cols {
            for r in 0..self.rows {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                axpy(b, &self.data[k * self.rows..(k + 1) * self.rows], dst);
            }
        }
        out
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[c * self.rows + r]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[c * self.rows + r]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators: fixed summation order, better pipelining.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Mat,
    perm: Vec<usize>,
    condition: f64,
}

impl Lu {
    /// Smallest accepted ratio of min to max pivot magnitude.
    pub const RCOND_MIN: f64 = 1e-14;

    pub fn factor(mut a: Mat) -> Result<Self> {
        let n = a.rows;
        assert_eq!(n, a.cols, "LU needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[(k, k)].abs();
            for r in k + 1..n {
                let v = a[(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    let tmp = a[(k, c)];
                    a[(k, c)] = a[(p, c)];
                    a[(p, c)] = tmp;
                }
            }
            let pivot = a[(k, k)];
            if pivot == 0.0 {
                return Err(Error::SingularSmallSystem { condition: f64::INFINITY });
            }
            for r in k + 1..n {
                a[(r, k)] /= pivot;
            }
            for c in k + 1..n {
                let akc = a[(k, c)];
                if akc == 0.0 {
                    continue;
                }
                for r in k + 1..n {
                    let l = a[(r, k)];
                    a[(r, c)] -= l * akc;
                }
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let p = a[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let condition = if n == 0 { 1.0 } else { hi / lo };
        if n > 0 && lo < Self::RCOND_MIN * hi {
            return Err(Error::SingularSmallSystem { condition });
        }
        Ok(Self { lu: a, perm, condition })
    }

    /// Ratio of largest to smallest pivot; a cheap condition estimate.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// Solves `A X = B` in place for column-major `B`.
    pub fn solve_in_place(&self, b: &mut Mat) {
        let n = self.lu.rows;
        assert_eq!(b.rows, n);
        let mut tmp = vec![0.0; n];
        for j in 0..b.cols {
            let col = b.col_mut(j);
            for i in 0..n {
                tmp[i] = col[self.perm[i]];
            }
            for i in 0..n {
                let mut s = tmp[i];
                for k in 0..i {
                    s -= self.lu[(i, k)] * tmp[k];
                }
                tmp[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = tmp[i];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * tmp[k];
                }
                tmp[i] = s / self.lu[(i, i)];
            }
            col.copy_from_slice(&tmp);
        }
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Eigenvectors as columns, matching `values`.
    pub vectors: Mat,
}

/// Householder tridiagonalization followed by implicit QL iteration.
///
/// Only the lower triangle of `a` is read.
pub fn symmetric_eigen(a: &Mat) -> SymmetricEigen {
    let n = a.rows;
    assert_eq!(n, a.cols);
    if n == 0 {
        return SymmetricEigen { values: Vec::new(), vectors: Mat::zeros(0, 0) };
    }
    let mut v = a.clone();
    for c in 0..n {
        for r in 0..c {
            v[(r, c)] = v[(c, r)];
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    ql_implicit(&mut v, &mut d, &mut e);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.col_mut(dst).copy_from_slice(v.col(src));
    }
    SymmetricEigen { values, vectors }
}

// Householder reduction to tridiagonal form with accumulated transforms
// (the classical tred2 scheme). On exit `d` is the diagonal, `e[1..]` the
// subdiagonal and `v` the orthogonal transform.
fn tridiagonalize(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = v.rows;
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = v.col_mut(j);
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let g = dot(&v.col(i + 1)[..=i], &v.col(j)[..=i]);
                let col = v.col_mut(j);
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

// Implicit QL on the tridiagonal (d, e), rotating the columns of `v`.
fn ql_implicit(v: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = v.rows;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = v.data.split_at_mut((i + 1) * n);
                    let vi = &mut lo[i * n..];
                    let vi1 = &mut hi[..n];
                    for k in 0..n {
                        let t = vi1[k];
                        vi1[k] = s * vi[k] + c * t;
                        vi[k] = c * vi[k] - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

/// Result of [`gram_schmidt`].
#[derive(Debug, Clone)]
pub struct Orthonormalized {
    /// Orthonormal columns, column-major `n x kept.len()`.
    pub vectors: Vec<f64>,
    /// Original indices of the columns that survived.
    pub kept: Vec<usize>,
    /// Original indices of the columns dropped as dependent.
    pub dropped: Vec<usize>,
}

/// Drop threshold on a column's norm after projection (columns are scaled
/// to unit norm first).
pub const GS_DROP_TOL: f64 = 1e-10;

/// Two-pass modified Gram-Schmidt on the `m` columns of column-major `v`.
pub fn gram_schmidt(v: &[f64], n: usize, m: usize) -> Orthonormalized {
    assert_eq!(v.len(), n * m);
    let mut out: Vec<f64> = Vec::with_capacity(n * m);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut w = vec![0.0; n];
    for j in 0..m {
        w.copy_from_slice(&v[j * n..(j + 1) * n]);
        let n0 = norm(&w);
        if !(n0 > 0.0) || !n0.is_finite() {
            dropped.push(j);
            continue;
        }
        w.iter_mut().for_each(|x| *x /= n0);
        for _pass in 0..2 {
            for q in out.chunks(n) {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let r = norm(&w);
        if r < GS_DROP_TOL {
            dropped.push(j);
            continue;
        }
        out.extend(w.iter().map(|x| x / r));
        kept.push(j);
    }
    Orthonormalized { vectors: out, kept, dropped }
}
