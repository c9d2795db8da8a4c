//! Weighted lattice graphs, Laplacians and the seed-first block partition.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use crate::sparse::CsrMatrix;

/// Floor applied to every edge weight so the graph stays connected.
pub const W_MIN: f64 = 1e-8;

/// Face-adjacent neighbourhoods: 4 neighbours in 2D, 6 in 3D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Neighborhood {
    Four,
    Six,
}

impl Neighborhood {
    pub fn for_ndim(ndim: usize) -> Self {
        if ndim == 3 {
            Self::Six
        } else {
            Self::Four
        }
    }

    pub fn ndim(self) -> usize {
        match self {
            Self::Four => 2,
            Self::Six => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaplacianMode {
    Unnormalized,
    Normalized,
}

/// Symmetric nonnegative weights with zero diagonal, plus degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: CsrMatrix,
    degrees: Vec<f64>,
}

impl WeightedGraph {
    pub fn from_weights(weights: CsrMatrix) -> Result<Self> {
        if weights.n_rows() != weights.n_cols() {
            return Err(Error::InvalidParam("weight matrix must be square".into()));
        }
        let degrees = (0..weights.n_rows()).map(|r| weights.row(r).1.iter().sum()).collect();
        Ok(Self { weights, degrees })
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn weights(&self) -> &CsrMatrix {
        &self.weights
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Total volume `1^T D 1`.
    pub fn volume(&self) -> f64 {
        self.degrees.iter().sum()
    }

    /// Builds `L = D - W` or `D^{-1/2} L D^{-1/2}`. Fails on a zero degree.
    pub fn laplacian(&self, mode: LaplacianMode) -> Result<Laplacian> {
        if let Some(vertex) = self.degrees.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateGraph { vertex });
        }
        Ok(self.laplacian_with_floor(mode, 0.0))
    }

    /// Like [`laplacian`](Self::laplacian) but degrees below `floor` are
    /// raised to it inside the normalization; isolated vertices then get a
    /// zero row instead of an error.
    pub fn laplacian_with_floor(&self, mode: LaplacianMode, floor: f64) -> Laplacian {
        let n = self.len();
        let d_sqrt: Vec<f64> = self.degrees.iter().map(|&d| d.max(floor).sqrt()).collect();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(self.weights.nnz() + n);
        let mut values = Vec::with_capacity(self.weights.nnz() + n);
        for r in 0..n {
            let (cols, vals) = self.weights.row(r);
            let mut diag_done = false;
            let diag = match mode {
                LaplacianMode::Unnormalized => self.degrees[r],
                LaplacianMode::Normalized => self.degrees[r] / (d_sqrt[r] * d_sqrt[r]),
            };
            for (&c, &w) in cols.iter().zip(vals) {
                if c == r {
                    continue;
                }
                if !diag_done && c > r {
                    indices.push(r);
                    values.push(diag);
                    diag_done = true;
                }
                indices.push(c);
                values.push(match mode {
                    LaplacianMode::Unnormalized => -w,
                    LaplacianMode::Normalized => -w / (d_sqrt[r] * d_sqrt[c]),
                });
            }
            if !diag_done {
                indices.push(r);
                values.push(diag);
            }
            indptr.push(indices.len());
        }
        let matrix = CsrMatrix::from_parts(n, n, indptr, indices, values);
        Laplacian {
            mode,
            matrix,
            d_sqrt: match mode {
                LaplacianMode::Unnormalized => None,
                LaplacianMode::Normalized => Some(d_sqrt),
            },
        }
    }
}

/// An image graph on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGraph {
    grid: Grid,
    neighborhood: Neighborhood,
    beta: f64,
    graph: WeightedGraph,
}

impl LatticeGraph {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> &[usize] {
        self.grid.dims()
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.neighborhood
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn laplacian(&self, mode: LaplacianMode) -> Result<Laplacian> {
        self.graph.laplacian(mode)
    }
}

/// Edge weights `max(exp(-beta |J(x) - J(y)|), W_MIN)` between face neighbours.
pub fn build_graph(image: &Image, beta: f64, neighborhood: Neighborhood) -> Result<LatticeGraph> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParam(alloc::format!("beta must be finite and >= 0, got {beta}")));
    }
    let grid = image.grid();
    if neighborhood.ndim() != grid.ndim() {
        return Err(Error::InvalidParam(alloc::format!(
            "{neighborhood:?} neighbourhood on a {}D image",
            grid.ndim()
        )));
    }
    let data = image.data();
    let n = grid.len();
    let strides = grid.strides();
    let dims = grid.dims();

    let mut indptr = Vec::with_capacity(n + 1);
    indptr.push(0);
    let mut indices = Vec::with_capacity(2 * grid.ndim() * n);
    let mut values = Vec::with_capacity(2 * grid.ndim() * n);
    let mut nbrs: Vec<usize> = Vec::with_capacity(6);
    for x in 0..n {
        let c = grid.coords(x);
        nbrs.clear();
        // Descending strides first gives ascending neighbour indices.
        for a in (0..grid.ndim()).rev() {
            if c[a] > 0 {
                nbrs.push(x - strides[a]);
            }
        }
        for a in 0..grid.ndim() {
            if c[a] + 1 < dims[a] {
                nbrs.push(x + strides[a]);
            }
        }
        nbrs.sort_unstable();
        for &y in &nbrs {
            indices.push(y);
            values.push(edge_weight(data[x], data[y], beta));
        }
        indptr.push(indices.len());
    }
    let weights = CsrMatrix::from_parts(n, n, indptr, indices, values);
    let graph = WeightedGraph::from_weights(weights)?;
    Ok(LatticeGraph { grid, neighborhood, beta, graph })
}

#[inline]
pub fn edge_weight(a: f64, b: f64, beta: f64) -> f64 {
    (-beta * (a - b).abs()).exp().max(W_MIN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    mode: LaplacianMode,
    matrix: CsrMatrix,
    d_sqrt: Option<Vec<f64>>,
}

impl Laplacian {
    pub fn mode(&self) -> LaplacianMode {
        self.mode
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n_rows() == 0
    }

    /// `D^{1/2}` diagonal; present in normalized mode only.
    pub fn d_sqrt(&self) -> Option<&[f64]> {
        self.d_sqrt.as_deref()
    }
}

/// Seeded voxels and their labels, with the seed-first ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPartition {
    n: usize,
    seed_indices: Vec<usize>,
    seed_labels: Vec<usize>,
    non_seeded: Vec<usize>,
    // position[x] is x's row in the seed-first ordering
    position: Vec<usize>,
}

impl SeedPartition {
    /// Duplicate seeds with the same label collapse; conflicting ones fail.
    pub fn new(n: usize, seeds: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = seeds.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidParam(alloc::format!(
                    "voxel {} seeded with labels {} and {}",
                    w[0].0,
                    w[0].1,
                    w[1].1
                )));
            }
        }
        if let Some(&(index, _)) = sorted.iter().find(|s| s.0 >= n) {
            return Err(Error::Index { index, len: n });
        }
        let seed_indices: Vec<usize> = sorted.iter().map(|s| s.0).collect();
        let seed_labels = sorted.iter().map(|s| s.1).collect();
        let mut position = vec![usize::MAX; n];
        for (i, &x) in seed_indices.iter().enumerate() {
            position[x] = i;
        }
        let mut non_seeded = Vec::with_capacity(n - seed_indices.len());
        for x in 0..n {
            if position[x] == usize::MAX {
                position[x] = seed_indices.len() + non_seeded.len();
                non_seeded.push(x);
            }
        }
        Ok(Self { n, seed_indices, seed_labels, non_seeded, position })
    }

    pub fn empty(n: usize) -> Self {
        Self::new(n, &[]).expect("empty partition is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.seed_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seed_indices.is_empty()
    }

    pub fn seed_indices(&self) -> &[usize] {
        &self.seed_indices
    }

    pub fn seed_labels(&self) -> &[usize] {
        &self.seed_labels
    }

    pub fn non_seeded(&self) -> &[usize] {
        &self.non_seeded
    }

    /// Row of voxel `x` in the seed-first ordering.
    pub fn position(&self, x: usize) -> usize {
        self.position[x]
    }

    /// Seed-first ordering: `order()[row] = voxel`.
    pub fn order(&self) -> Vec<usize> {
        let mut v = self.seed_indices.clone();
        v.extend_from_slice(&self.non_seeded);
        v
    }

    /// `col_map` for the non-seeded block, as used by [`CsrMatrix::select`].
    pub(crate) fn non_seeded_map(&self) -> Vec<usize> {
        let s = self.len();
        (0..self.n).map(|x| if self.position[x] >= s { self.position[x] - s } else { usize::MAX }).collect()
    }

    pub(crate) fn seeded_map(&self) -> Vec<usize> {
        let s = self.len();
        (0..self.n).map(|x| if self.position[x] < s { self.position[x] } else { usize::MAX }).collect()
    }
}

/// `L_s` (S x S), `B` (S x (N-S)) and `L_n` ((N-S) x (N-S)).
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub l_s: CsrMatrix,
    pub b: CsrMatrix,
    pub l_n: CsrMatrix,
}

pub fn partition_blocks(lap: &Laplacian, seeds: &SeedPartition) -> Result<Blocks> {
    if seeds.n() != lap.len() {
        return Err(Error::DimsMismatch { expected: vec![lap.len()], found: vec![seeds.n()] });
    }
    let s = seeds.len();
    let smap = seeds.seeded_map();
    let nmap = seeds.non_seeded_map();
    let m = lap.matrix();
    Ok(Blocks {
        l_s: m.select(seeds.seed_indices(), &smap, s),
        b: m.select(seeds.seed_indices(), &nmap, lap.len() - s),
        l_n: m.select(seeds.non_seeded(), &nmap, lap.len() - s),
    })
}
