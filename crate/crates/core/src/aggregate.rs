//! Super-vertex graphs: cluster voxels by prior similarity and proximity,
//! coarsen precomputed eigenvectors onto the clusters, and copy the
//! aggregate solution back to voxels.

use alloc::collections::BTreeMap;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fast::{visit_columns, PackMeta, SpectralBasis};
use crate::graph::{Laplacian, LaplacianMode, SeedPartition, WeightedGraph, W_MIN};
use crate::image::{Grid, ProbabilityField};
use crate::linalg::dense::gram_schmidt;
use crate::linalg::{smallest_eigs_with, EigOptions, EigenBasis};
use crate::rw::LabelProblem;
use crate::sparse::CsrMatrix;

/// Projection of `N` voxels onto `N̄` super-vertices.
///
/// `eta` is row-stochastic (`N x N̄`); the aggregation map is `eta` with each
/// column divided by its mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    dims: Vec<usize>,
    eta: CsrMatrix,
    mass: Vec<f64>,
    assignment: Option<Vec<u32>>,
}

impl Aggregation {
    /// Every voxel its own super-vertex.
    pub fn identity(dims: &[usize]) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        Self::from_assignment(dims, (0..n as u32).collect())
    }

    /// Hard clusters from a voxel-to-cluster map with ids `0..N̄`.
    pub fn from_assignment(dims: &[usize], assignment: Vec<u32>) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        if assignment.len() != n {
            return Err(Error::DimsMismatch { expected: dims.to_vec(), found: vec![assignment.len()] });
        }
        let n_bar = assignment.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut mass = vec![0.0; n_bar];
        assignment.iter().for_each(|&c| mass[c as usize] += 1.0);
        if let Some(empty) = mass.iter().position(|&m| m == 0.0) {
            return Err(Error::InvalidParam(alloc::format!("cluster {empty} is empty")));
        }
        let indptr = (0..=n).collect();
        let indices = assignment.iter().map(|&c| c as usize).collect();
        let eta = CsrMatrix::from_parts(n, n_bar, indptr, indices, vec![1.0; n]);
        Ok(Self { dims: dims.to_vec(), eta, mass, assignment: Some(assignment) })
    }

    /// Soft projection; rows must sum to one and every column must carry mass.
    pub fn from_projection(dims: &[usize], eta: CsrMatrix) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        if eta.n_rows() != n {
            return Err(Error::DimsMismatch { expected: dims.to_vec(), found: vec![eta.n_rows()] });
        }
        let mut mass = vec![0.0; eta.n_cols()];
        for x in 0..n {
            let (cols, vals) = eta.row(x);
            let sum: f64 = vals.iter().sum();
            if (sum - 1.0).abs() > ProbabilityField::ROW_TOL || vals.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidParam(alloc::format!("projection row {x} is not stochastic")));
            }
            cols.iter().zip(vals).for_each(|(&c, &v)| mass[c] += v);
        }
        if let Some(empty) = mass.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidParam(alloc::format!("cluster {empty} is empty")));
        }
        Ok(Self { dims: dims.to_vec(), eta, mass, assignment: None })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.eta.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `N̄`.
    pub fn n_bar(&self) -> usize {
        self.mass.len()
    }

    pub fn eta(&self) -> &CsrMatrix {
        &self.eta
    }

    /// Column sums of `eta`; cluster sizes for hard clusters.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// The hard assignment, if this aggregation has one.
    pub fn assignment(&self) -> Option<&[u32]> {
        self.assignment.as_deref()
    }

    /// Most likely cluster per voxel (lowest id on ties).
    pub fn cluster_map(&self) -> Vec<u32> {
        if let Some(a) = &self.assignment {
            return a.clone();
        }
        (0..self.len())
            .map(|x| {
                let (cols, vals) = self.eta.row(x);
                let mut best = (0usize, f64::NEG_INFINITY);
                for (&c, &v) in cols.iter().zip(vals) {
                    if v > best.1 {
                        best = (c, v);
                    }
                }
                best.0 as u32
            })
            .collect()
    }

    /// Dims used for fields on the super-vertices.
    pub fn aggregate_dims(&self) -> [usize; 2] {
        [self.n_bar(), 1]
    }

    /// `w̄_yz = sum_{x, x'} eta(x, y) w_{x x'} eta(x', z)` for `y != z`.
    pub fn super_graph(&self, graph: &WeightedGraph) -> Result<WeightedGraph> {
        if graph.len() != self.len() {
            return Err(Error::DimsMismatch { expected: vec![self.len()], found: vec![graph.len()] });
        }
        let n_bar = self.n_bar();
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_bar];
        let w = graph.weights();
        for x in 0..self.len() {
            let (ex_c, ex_v) = self.eta.row(x);
            let (nb, wv) = w.row(x);
            for (&xp, &wxy) in nb.iter().zip(wv) {
                if xp == x {
                    continue;
                }
                let (ep_c, ep_v) = self.eta.row(xp);
                for (&y, &a) in ex_c.iter().zip(ex_v) {
                    for (&z, &b) in ep_c.iter().zip(ep_v) {
                        if y != z {
                            *rows[y].entry(z).or_insert(0.0) += a * b * wxy;
                        }
                    }
                }
            }
        }
        let mut indptr = Vec::with_capacity(n_bar + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        WeightedGraph::from_weights(CsrMatrix::from_parts(n_bar, n_bar, indptr, indices, values))
    }

    /// Normalized Laplacian of [`super_graph`](Self::super_graph), degrees
    /// floored at `W_MIN` inside the normalization.
    pub fn laplacian(&self, graph: &WeightedGraph) -> Result<Laplacian> {
        Ok(self.super_graph(graph)?.laplacian_with_floor(LaplacianMode::Normalized, W_MIN))
    }

    /// Cluster averages `P̄_y = sum_x eta(x, y) P_x / mass_y`.
    pub fn aggregate_field(&self, field: &ProbabilityField) -> Result<ProbabilityField> {
        if field.len() != self.len() {
            return Err(Error::DimsMismatch { expected: vec![self.len()], found: vec![field.len()] });
        }
        let k = field.k();
        let mut out = vec![0.0; self.n_bar() * k];
        for x in 0..self.len() {
            let (cols, vals) = self.eta.row(x);
            let row = field.row(x);
            for (&y, &e) in cols.iter().zip(vals) {
                for l in 0..k {
                    out[y * k + l] += e * row[l];
                }
            }
        }
        for y in 0..self.n_bar() {
            for l in 0..k {
                out[y * k + l] /= self.mass[y];
            }
        }
        ProbabilityField::new(&self.aggregate_dims(), k, out)
    }

    /// Seeds moved to their voxel's cluster. Two seeds with different labels
    /// in one cluster are rejected.
    pub fn aggregate_seeds(&self, seeds: &SeedPartition) -> Result<SeedPartition> {
        let map = self.cluster_map();
        let moved: Vec<(usize, usize)> = seeds
            .seed_indices()
            .iter()
            .zip(seeds.seed_labels())
            .map(|(&x, &l)| (map[x] as usize, l))
            .collect();
        SeedPartition::new(self.n_bar(), &moved)
    }

    /// The same problem posed on the super-vertices.
    pub fn aggregate_problem(&self, prob: &LabelProblem) -> Result<LabelProblem> {
        let seeds = self.aggregate_seeds(prob.seeds())?;
        let priors = prob.priors().map(|p| self.aggregate_field(p)).transpose()?;
        LabelProblem::new(&self.aggregate_dims(), prob.k(), seeds, priors, prob.gamma())
    }
}

/// Greedy region growing in voxel order.
///
/// Each unassigned voxel starts a cluster that grows through face neighbours
/// lying within `max_radius` (Chebyshev) of the starting voxel and whose
/// priors differ from it by at most `similarity_tol` in L1.
pub fn build_aggregation(priors: &ProbabilityField, max_radius: usize, similarity_tol: f64) -> Result<Aggregation> {
    if !(similarity_tol >= 0.0) {
        return Err(Error::InvalidParam("similarity tolerance must be >= 0".into()));
    }
    let grid = Grid::new(priors.dims())?;
    let n = grid.len();
    let ndim = grid.ndim();
    let mut assignment = vec![u32::MAX; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if assignment[start] != u32::MAX {
            continue;
        }
        let id = next;
        next += 1;
        assignment[start] = id;
        let c0 = grid.coords(start);
        let p0 = priors.row(start);
        queue.push_back(start);
        while let Some(x) = queue.pop_front() {
            let c = grid.coords(x);
            for axis in 0..ndim {
                for dir in [-1i64, 1] {
                    let v = c[axis] as i64 + dir;
                    if v < 0 || v >= grid.dims()[axis] as i64 {
                        continue;
                    }
                    let y = if dir < 0 { x - grid.strides()[axis] } else { x + grid.strides()[axis] };
                    if assignment[y] != u32::MAX {
                        continue;
                    }
                    let mut cy = c;
                    cy[axis] = v as usize;
                    let far = (0..ndim).any(|a| cy[a].abs_diff(c0[a]) > max_radius);
                    if far {
                        continue;
                    }
                    let dist: f64 = priors.row(y).iter().zip(p0).map(|(a, b)| (a - b).abs()).sum();
                    if dist > similarity_tol {
                        continue;
                    }
                    assignment[y] = id;
                    queue.push_back(y);
                }
            }
        }
    }
    Aggregation::from_assignment(priors.dims(), assignment)
}

/// `Δ(x) = sum_{x' ~ x} sum_y |eta(x, y) - eta(x', y)|`, neighbours taken
/// from the graph's edges.
pub fn delta_weights(agg: &Aggregation, graph: &WeightedGraph) -> Result<Vec<f64>> {
    if graph.len() != agg.len() {
        return Err(Error::DimsMismatch { expected: vec![agg.len()], found: vec![graph.len()] });
    }
    let eta = agg.eta();
    let mut out = vec![0.0; agg.len()];
    for (x, slot) in out.iter_mut().enumerate() {
        let (nb, _) = graph.weights().row(x);
        let (ac, av) = eta.row(x);
        for &xp in nb {
            if xp == x {
                continue;
            }
            let (bc, bv) = eta.row(xp);
            *slot += sparse_l1(ac, av, bc, bv);
        }
    }
    Ok(out)
}

fn sparse_l1(ac: &[usize], av: &[f64], bc: &[usize], bv: &[f64]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < ac.len() || j < bc.len() {
        if j == bc.len() || (i < ac.len() && ac[i] < bc[j]) {
            s += av[i].abs();
            i += 1;
        } else if i == ac.len() || bc[j] < ac[i] {
            s += bv[j].abs();
            j += 1;
        } else {
            s += (av[i] - bv[j]).abs();
            i += 1;
            j += 1;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coarsening {
    /// Cluster averages, `v̄_y = sum_x η̄(x, y) v_x`.
    Naive,
    /// Averages weighted by `Δ(x)`, so voxels whose edges all stay inside
    /// one cluster do not count.
    Delta,
}

impl Coarsening {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Delta => "delta",
        }
    }
}

/// Orthonormal vectors on the super-vertices with their Ncut values.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseBasis {
    meta: PackMeta,
    basis: EigenBasis,
    delta: Option<Vec<f64>>,
    dropped: usize,
}

impl CoarseBasis {
    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    /// Per-voxel Δ weights when the Δ variant was used.
    pub fn delta(&self) -> Option<&[f64]> {
        self.delta.as_deref()
    }

    /// Columns removed as linearly dependent.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

impl SpectralBasis for CoarseBasis {
    fn meta(&self) -> &PackMeta {
        &self.meta
    }

    fn values(&self) -> &[f64] {
        self.basis.values()
    }

    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        let n = self.meta.len();
        out.copy_from_slice(&self.basis.vectors()[start * n..start * n + out.len()]);
        Ok(())
    }

    fn resident(&self) -> Option<&[f64]> {
        Some(self.basis.vectors())
    }
}

fn coarse_meta<B: SpectralBasis + ?Sized>(base: &B, agg: &Aggregation, agg_lap: &Laplacian) -> PackMeta {
    PackMeta {
        dims: agg.aggregate_dims().to_vec(),
        spacing: vec![1.0, 1.0],
        neighborhood: base.meta().neighborhood,
        beta: base.meta().beta,
        d_sqrt: agg_lap.d_sqrt().expect("normalized").to_vec(),
        image_hash: base.meta().image_hash,
    }
}

/// Projects every column of `basis` onto the super-vertices, orthonormalizes
/// and sorts by Ncut value on the aggregate graph.
///
/// Columns live in normalized coordinates, so each is read as `D^{-1/2} q`,
/// averaged, and scaled by the aggregate graph's `D̄^{1/2}`.
pub fn coarsen_basis<B: SpectralBasis + ?Sized>(
    basis: &B,
    agg: &Aggregation,
    graph: &WeightedGraph,
    variant: Coarsening,
) -> Result<CoarseBasis> {
    let n = basis.n();
    if agg.len() != n || graph.len() != n {
        return Err(Error::DimsMismatch { expected: vec![n], found: vec![agg.len(), graph.len()] });
    }
    let m = basis.m();
    let n_bar = agg.n_bar();
    let delta = match variant {
        Coarsening::Naive => None,
        Coarsening::Delta => Some(delta_weights(agg, graph)?),
    };
    let eta = agg.eta();
    let agg_lap = agg.laplacian(graph)?;
    let fine_ds = &basis.meta().d_sqrt;
    let coarse_ds = agg_lap.d_sqrt().expect("normalized");
    // Weight of voxel x in cluster y is Δ(x) η̄(x, y), normalized per
    // cluster. A cluster with no boundary at all falls back to η̄.
    let weight = |x: usize| delta.as_ref().map_or(1.0, |d| d[x]);
    let mut total = vec![0.0; n_bar];
    for x in 0..n {
        let (cols, vals) = eta.row(x);
        for (&y, &e) in cols.iter().zip(vals) {
            total[y] += weight(x) * e;
        }
    }
    let plain: Vec<bool> = total.iter().map(|&t| t <= 0.0).collect();
    let mut coarse = vec![0.0; n_bar * m];
    visit_columns(basis, m, &mut |start, block| {
        for (c, q) in block.chunks_exact(n).enumerate() {
            let out = &mut coarse[(start + c) * n_bar..(start + c + 1) * n_bar];
            for x in 0..n {
                // Averaged as relaxed cut values D^{-1/2} q.
                let v = q[x] / fine_ds[x];
                let (cols, vals) = eta.row(x);
                for (&y, &e) in cols.iter().zip(vals) {
                    let w = if plain[y] { e / agg.mass()[y] } else { weight(x) * e / total[y] };
                    out[y] += w * v;
                }
            }
            out.iter_mut().zip(coarse_ds).for_each(|(o, &d)| *o *= d);
        }
        Ok(())
    })?;
    let ortho = gram_schmidt(&coarse, n_bar, m);
    if ortho.kept.is_empty() {
        return Err(Error::EmptyBasis);
    }
    if !ortho.dropped.is_empty() {
        log::debug!("coarsening dropped {} dependent columns", ortho.dropped.len());
    }
    let kept = ortho.kept.len();
    let mut values = Vec::with_capacity(kept);
    for q in ortho.vectors.chunks_exact(n_bar) {
        values.push(crate::refresh::ncut_value(&agg_lap, q)?.max(0.0));
    }
    let mut order: Vec<usize> = (0..kept).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut vectors = Vec::with_capacity(kept * n_bar);
    for &j in &order {
        vectors.extend_from_slice(&ortho.vectors[j * n_bar..(j + 1) * n_bar]);
    }
    let values = order.iter().map(|&j| values[j]).collect();
    Ok(CoarseBasis {
        meta: coarse_meta(basis, agg, &agg_lap),
        basis: EigenBasis::new(n_bar, values, vectors)?,
        delta,
        dropped: ortho.dropped.len(),
    })
}

/// Eigenpairs computed directly on the aggregate graph; the reference the
/// coarsened bases approximate.
pub fn direct_aggregate_basis<B: SpectralBasis + ?Sized>(
    like: &B,
    agg: &Aggregation,
    graph: &WeightedGraph,
    m: usize,
    opts: &EigOptions,
) -> Result<CoarseBasis> {
    let agg_lap = agg.laplacian(graph)?;
    let basis = smallest_eigs_with(agg_lap.matrix(), m.min(agg.n_bar()), opts)?;
    Ok(CoarseBasis { meta: coarse_meta(like, agg, &agg_lap), basis, delta: None, dropped: 0 })
}

/// `U_x = sum_y eta(x, y) Ū_y`.
pub fn propagate(u_bar: &ProbabilityField, agg: &Aggregation) -> Result<ProbabilityField> {
    if u_bar.len() != agg.n_bar() {
        return Err(Error::DimsMismatch { expected: vec![agg.n_bar()], found: vec![u_bar.len()] });
    }
    let k = u_bar.k();
    let mut out = vec![0.0; agg.len() * k];
    for x in 0..agg.len() {
        let (cols, vals) = agg.eta().row(x);
        let row = &mut out[x * k..(x + 1) * k];
        for (&y, &e) in cols.iter().zip(vals) {
            for (o, &v) in row.iter_mut().zip(u_bar.row(y)) {
                *o += e * v;
            }
        }
    }
    ProbabilityField::new(agg.dims(), k, out)
}
