//! Compressed sparse row storage for the lattice operators.
//!
//! Symmetric matrices keep both triangles; column indices within a row are
//! sorted, so every row product sums in a fixed order.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n_rows && c < n_cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Self { n_rows, n_cols, indptr, indices, values }
    }

    /// Builds directly from CSR arrays. Column indices must be sorted per row.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(indptr.len(), n_rows + 1);
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.iter().all(|&c| c < n_cols));
        Self { n_rows, n_cols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.indptr[r]..self.indptr[r + 1];
            let mut acc = 0.0;
            for (&c, &v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                acc += v * x[c];
            }
            *out = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `Y = A X` for column-major `X` with `b` columns.
    pub fn mul_block_into(&self, x: &[f64], b: usize, y: &mut [f64]) {
        for j in 0..b {
            self.mul_vec_into(
                &x[j * self.n_cols..(j + 1) * self.n_cols],
                &mut y[j * self.n_rows..(j + 1) * self.n_rows],
            );
        }
    }

    /// `x^T A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            let mut row = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                row += v * x[c];
            }
            acc += xr * row;
        }
        acc
    }

    /// The submatrix with the given rows and columns.
    ///
    /// `col_map[c]` is the new column index of original column `c`, or
    /// `usize::MAX` when the column is dropped.
    pub fn select(&self, rows: &[usize], col_map: &[usize], n_cols: usize) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            let (cols, vals) = self.row(r);
            let start = indices.len();
            for (&c, &v) in cols.iter().zip(vals) {
                let nc = col_map[c];
                if nc != usize::MAX {
                    indices.push(nc);
                    values.push(v);
                }
            }
            // A monotone col_map keeps the order; sort otherwise.
            if indices[start..].windows(2).any(|w| w[0] > w[1]) {
                let mut pairs: Vec<(usize, f64)> =
                    indices[start..].iter().copied().zip(values[start..].iter().copied()).collect();
                pairs.sort_by_key(|p| p.0);
                for (i, (c, v)) in pairs.into_iter().enumerate() {
                    indices[start + i] = c;
                    values[start + i] = v;
                }
            }
            indptr.push(indices.len());
        }
        Self { n_rows: rows.len(), n_cols, indptr, indices, values }
    }

    /// Maximum absolute row sum; bounds the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Dense row-major copy; intended for small matrices and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[r * self.n_cols + c] = v;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).all(|(&c, &v)| (v - self.get(c, r)).abs() <= tol)
        })
    }
}
