//! Offline eigenpairs and the online solve that only inverts an `S x S`
//! system.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Laplacian, LaplacianMode, Neighborhood};
use crate::image::{Image, ProbabilityField};
use crate::linalg::dense::{Lu, Mat};
use crate::linalg::{gemm_nn_into, smallest_eigs_with, EigOptions, EigenBasis};
use crate::rw::{finish_rows, LabelProblem};

/// Eigenvalues at or below this count as the null space.
pub const ZERO_EIG: f64 = 1e-8;
/// Columns per streamed block.
pub const COLUMN_BLOCK: usize = 64;
/// Largest seed count the dense seed system accepts.
pub const MAX_SEEDS: usize = 10_000;
/// Default cap on the number of precomputed pairs.
pub const DEFAULT_M_CAP: usize = 4096;

/// Everything about a pack except its vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PackMeta {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub neighborhood: Neighborhood,
    pub beta: f64,
    /// `D^{1/2}` of the graph the pairs were computed on.
    pub d_sqrt: Vec<f64>,
    pub image_hash: [u8; 32],
}

impl PackMeta {
    pub fn len(&self) -> usize {
        self.d_sqrt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_sqrt.is_empty()
    }
}

/// Build details that are not part of the binary pack format.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Provenance {
    pub eig_tol: Option<f64>,
    /// Seconds since the Unix epoch; filled in by callers with a clock.
    pub created_unix: Option<u64>,
}

/// Read access to an ordered set of orthonormal columns with values.
pub trait SpectralBasis {
    fn meta(&self) -> &PackMeta;
    /// Ascending values, one per column.
    fn values(&self) -> &[f64];
    /// Fills `out` (column-major, `N x count`) with columns `start..start+count`.
    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()>;
    /// The whole column-major `Q` when it is resident in memory.
    fn resident(&self) -> Option<&[f64]> {
        None
    }

    fn n(&self) -> usize {
        self.meta().len()
    }

    fn m(&self) -> usize {
        self.values().len()
    }

    /// Whether column 0 stands for the Laplacian's null vector, so that a
    /// `gamma = 0` solve deflates it rather than inverting its value.
    fn leading_null(&self) -> bool {
        self.values().first().is_some_and(|&v| v <= ZERO_EIG)
    }
}

impl<B: SpectralBasis + ?Sized> SpectralBasis for &B {
    fn meta(&self) -> &PackMeta {
        (**self).meta()
    }
    fn values(&self) -> &[f64] {
        (**self).values()
    }
    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        (**self).read_columns(start, out)
    }
    fn resident(&self) -> Option<&[f64]> {
        (**self).resident()
    }
    fn leading_null(&self) -> bool {
        (**self).leading_null()
    }
}

impl<B: SpectralBasis + ?Sized> SpectralBasis for Arc<B> {
    fn meta(&self) -> &PackMeta {
        (**self).meta()
    }
    fn values(&self) -> &[f64] {
        (**self).values()
    }
    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        (**self).read_columns(start, out)
    }
    fn resident(&self) -> Option<&[f64]> {
        (**self).resident()
    }
    fn leading_null(&self) -> bool {
        (**self).leading_null()
    }
}

/// Calls `f(start, block)` over column blocks `0..m_use`, borrowing when the
/// basis is resident and reading `COLUMN_BLOCK` columns at a time otherwise.
pub fn visit_columns<B: SpectralBasis + ?Sized>(
    basis: &B,
    m_use: usize,
    f: &mut dyn FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let n = basis.n();
    if let Some(q) = basis.resident() {
        let mut start = 0;
        while start < m_use {
            let end = (start + COLUMN_BLOCK).min(m_use);
            f(start, &q[start * n..end * n])?;
            start = end;
        }
        return Ok(());
    }
    let mut buf = vec![0.0; n * COLUMN_BLOCK.min(m_use.max(1))];
    let mut start = 0;
    while start < m_use {
        let count = COLUMN_BLOCK.min(m_use - start);
        let block = &mut buf[..n * count];
        basis.read_columns(start, block)?;
        f(start, block)?;
        start += count;
    }
    Ok(())
}

/// `m` smallest eigenpairs of one image's normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPack {
    meta: PackMeta,
    basis: EigenBasis,
    provenance: Provenance,
}

impl SpectralPack {
    /// Checks the pack invariants.
    pub fn new(meta: PackMeta, basis: EigenBasis, provenance: Provenance) -> Result<Self> {
        if basis.n() != meta.len() {
            return Err(Error::DimsMismatch { expected: vec![meta.len()], found: vec![basis.n()] });
        }
        if meta.dims.iter().product::<usize>() != meta.len() {
            return Err(Error::DimsMismatch { expected: meta.dims.clone(), found: vec![meta.len()] });
        }
        if basis.m() == 0 {
            return Err(Error::EmptyBasis);
        }
        if !(meta.beta >= 0.0) || meta.d_sqrt.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParam("pack needs beta >= 0 and positive degrees".into()));
        }
        if basis.values()[0] > ZERO_EIG {
            return Err(Error::InvalidParam(alloc::format!(
                "first eigenvalue {} is not zero",
                basis.values()[0]
            )));
        }
        Ok(Self { meta, basis, provenance })
    }

    pub fn meta(&self) -> &PackMeta {
        &self.meta
    }

    pub fn basis(&self) -> &EigenBasis {
        &self.basis
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    pub fn beta(&self) -> f64 {
        self.meta.beta
    }

    pub fn dims(&self) -> &[usize] {
        &self.meta.dims
    }

    /// The first `m` pairs as a new pack.
    pub fn truncated(&self, m: usize) -> Self {
        Self { meta: self.meta.clone(), basis: self.basis.truncated(m.max(1)), provenance: self.provenance }
    }
}

impl SpectralBasis for SpectralPack {
    fn meta(&self) -> &PackMeta {
        &self.meta
    }

    fn values(&self) -> &[f64] {
        self.basis.values()
    }

    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        let n = self.meta.len();
        let src = self.basis.vectors();
        if start * n + out.len() > src.len() {
            return Err(Error::Index { index: start + out.len() / n.max(1), len: self.basis.m() });
        }
        out.copy_from_slice(&src[start * n..start * n + out.len()]);
        Ok(())
    }

    fn resident(&self) -> Option<&[f64]> {
        Some(self.basis.vectors())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeOptions {
    pub eig: EigOptions,
    pub m_cap: usize,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        Self { eig: EigOptions::default(), m_cap: DEFAULT_M_CAP }
    }
}

pub fn precompute(image: &Image, beta: f64, m: usize, eig_tol: f64) -> Result<SpectralPack> {
    let opts = PrecomputeOptions { eig: EigOptions { tol: eig_tol, ..EigOptions::default() }, ..Default::default() };
    precompute_with(image, beta, m, &opts)
}

/// Eigenpairs of the normalized Laplacian at `beta`.
///
/// If the eigensolver stops early the error carries the converged prefix;
/// [`SpectralPack::from_partial`] turns it into a smaller pack.
pub fn precompute_with(image: &Image, beta: f64, m: usize, opts: &PrecomputeOptions) -> Result<SpectralPack> {
    let n = image.len();
    if m == 0 || m > n.min(opts.m_cap) {
        return Err(Error::InvalidParam(alloc::format!(
            "m must be in 1..={}, got {m}",
            n.min(opts.m_cap)
        )));
    }
    let meta = pack_meta(image, beta)?;
    let lap = lattice_laplacian(image, beta)?;
    let provenance = Provenance { eig_tol: Some(opts.eig.tol), created_unix: None };
    match smallest_eigs_with(lap.matrix(), m, &opts.eig) {
        Ok(basis) => SpectralPack::new(meta, basis, provenance),
        Err(Error::EigNotConverged { requested, converged, partial }) => {
            log::warn!("eigensolver converged {converged} of {requested} pairs");
            Err(Error::EigNotConverged { requested, converged, partial })
        }
        Err(e) => Err(e),
    }
}

impl SpectralPack {
    /// A pack from the converged prefix reported by a failed precompute.
    pub fn from_partial(image: &Image, beta: f64, partial: EigenBasis, eig_tol: f64) -> Result<Self> {
        let meta = pack_meta(image, beta)?;
        Self::new(meta, partial, Provenance { eig_tol: Some(eig_tol), created_unix: None })
    }
}

fn pack_meta(image: &Image, beta: f64) -> Result<PackMeta> {
    let lap = lattice_laplacian(image, beta)?;
    Ok(PackMeta {
        dims: image.dims().to_vec(),
        spacing: image.spacing().to_vec(),
        neighborhood: Neighborhood::for_ndim(image.dims().len()),
        beta,
        d_sqrt: lap.d_sqrt().expect("normalized").to_vec(),
        image_hash: image.content_hash(),
    })
}

/// The normalized Laplacian every fast path works with.
pub fn lattice_laplacian(image: &Image, beta: f64) -> Result<Laplacian> {
    build_graph(image, beta, Neighborhood::for_ndim(image.dims().len()))?.laplacian(LaplacianMode::Normalized)
}

/// Packs of one image at ascending, distinct `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PackSet {
    packs: Vec<Arc<SpectralPack>>,
}

impl PackSet {
    pub fn new(packs: Vec<SpectralPack>) -> Result<Self> {
        Self::from_shared(packs.into_iter().map(Arc::new).collect())
    }

    pub fn from_shared(mut packs: Vec<Arc<SpectralPack>>) -> Result<Self> {
        if packs.is_empty() {
            return Err(Error::InvalidParam("a pack set needs at least one pack".into()));
        }
        packs.sort_by(|a, b| a.beta().total_cmp(&b.beta()));
        let first = packs[0].meta();
        for p in &packs[1..] {
            if p.meta().dims != first.dims || p.meta().image_hash != first.image_hash {
                return Err(Error::ImageMismatch);
            }
        }
        if packs.windows(2).any(|w| w[0].beta() == w[1].beta()) {
            return Err(Error::InvalidParam("pack betas must be distinct".into()));
        }
        Ok(Self { packs })
    }

    pub fn packs(&self) -> &[Arc<SpectralPack>] {
        &self.packs
    }

    pub fn betas(&self) -> Vec<f64> {
        self.packs.iter().map(|p| p.beta()).collect()
    }

    /// Index of the pack nearest to `beta` in log distance; lower beta wins
    /// ties.
    pub fn nearest(&self, beta: f64) -> usize {
        let key = |b: f64| b.max(1e-6).ln();
        let target = key(beta);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.packs.iter().enumerate() {
            let d = (key(p.beta()) - target).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Solves the labeling problem from the first `m_use` columns of `basis`.
///
/// `lap` is the normalized Laplacian of the graph being solved (for a
/// refreshed basis, the graph at the new beta). Seeded rows come out one-hot;
/// the rest are reconstructed from the eigenvectors, then clamped and
/// renormalized.
pub fn solve_fast<B: SpectralBasis + ?Sized>(
    basis: &B,
    lap: &Laplacian,
    prob: &LabelProblem,
    m_use: usize,
) -> Result<ProbabilityField> {
    let n = basis.n();
    let k = prob.k();
    if lap.mode() != LaplacianMode::Normalized {
        return Err(Error::InvalidParam("fast solve needs the normalized Laplacian".into()));
    }
    if lap.len() != n || prob.len() != n {
        return Err(Error::DimsMismatch { expected: vec![n], found: vec![lap.len(), prob.len()] });
    }
    if m_use > basis.m() {
        return Err(Error::InvalidParam(alloc::format!("m_use {m_use} exceeds pack size {}", basis.m())));
    }
    if m_use < k {
        return Err(Error::InsufficientBasis { m_use, labels: k });
    }
    let seeds = prob.seeds();
    let s = seeds.len();
    if s > MAX_SEEDS {
        return Err(Error::InvalidParam(alloc::format!("{s} seeds exceed the limit of {MAX_SEEDS}")));
    }
    let gamma = prob.gamma();
    if gamma == 0.0 && s == 0 {
        return Err(Error::SingularSystem);
    }
    let d_sqrt = lap.d_sqrt().expect("normalized Laplacian carries D^{1/2}");
    let lmat = lap.matrix();
    let values = &basis.values()[..m_use];
    let deflate = gamma == 0.0 && basis.leading_null();
    let inv: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(j, &l)| if deflate && j == 0 { 0.0 } else { 1.0 / (l + gamma) })
        .collect();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSmallSystem { condition: f64::INFINITY });
    }
    let is_seed: Vec<bool> = {
        let mut v = vec![false; n];
        seeds.seed_indices().iter().for_each(|&x| v[x] = true);
        v
    };
    let seed_idx = seeds.seed_indices();

    // Hat-space seed block and priors.
    let u_s = prob.seed_block();
    let mut u_s_hat = u_s.clone();
    for l in 0..k {
        for (i, &x) in seed_idx.iter().enumerate() {
            u_s_hat[l * s + i] *= d_sqrt[x];
        }
    }
    let p_hat: Option<Vec<f64>> = (gamma > 0.0).then(|| {
        let p = prob.priors().expect("validated");
        let mut out = vec![0.0; n * k];
        for x in 0..n {
            if !is_seed[x] {
                for l in 0..k {
                    out[x * k + l] = d_sqrt[x] * p.row(x)[l];
                }
            }
        }
        out
    });

    // Pass 1: Q_s, B Q_n, Q_n^T P_n and Q_n^T g_n.
    let mut q_s = vec![0.0; s * m_use]; // column-major S x m
    let mut bq = vec![0.0; s * m_use];
    let mut qtp = vec![0.0; m_use * k]; // column-major m x K
    let mut g: Vec<f64> = Vec::new();
    let mut h = vec![0.0; m_use];
    visit_columns(basis, m_use, &mut |start, block| {
        let cols = block.len() / n;
        if deflate && start == 0 {
            g = block[..n].to_vec();
        }
        for c in 0..cols {
            let j = start + c;
            let q = &block[c * n..(c + 1) * n];
            for (i, &x) in seed_idx.iter().enumerate() {
                q_s[j * s + i] = q[x];
                let (nbrs, vals) = lmat.row(x);
                let mut acc = 0.0;
                for (&y, &v) in nbrs.iter().zip(vals) {
                    if !is_seed[y] {
                        acc += v * q[y];
                    }
                }
                bq[j * s + i] = acc;
            }
            if let Some(ph) = &p_hat {
                for l in 0..k {
                    let mut acc = 0.0;
                    for x in 0..n {
                        acc += q[x] * ph[x * k + l];
                    }
                    qtp[l * m_use + j] = acc;
                }
            }
            if deflate {
                let mut acc = 0.0;
                for x in 0..n {
                    if !is_seed[x] {
                        acc += q[x] * g[x];
                    }
                }
                h[j] = acc;
            }
        }
        Ok(())
    })?;

    // C (m x K, column-major) such that U_n hat = Q_n C.
    let mut c = vec![0.0; m_use * k];
    if s == 0 {
        for l in 0..k {
            for j in 0..m_use {
                c[l * m_use + j] = gamma * inv[j] * qtp[l * m_use + j];
            }
        }
    } else {
        // L_s U_s hat (S x K).
        let mut ls_us = vec![0.0; s * k];
        for (i, &x) in seed_idx.iter().enumerate() {
            let (nbrs, vals) = lmat.row(x);
            for (&y, &v) in nbrs.iter().zip(vals) {
                if is_seed[y] {
                    let iy = seeds.position(y);
                    for l in 0..k {
                        ls_us[l * s + i] += v * u_s_hat[l * s + iy];
                    }
                }
            }
        }
        // BQ diag(inv), reused for the system matrix and right-hand side.
        let mut bq_inv = bq.clone();
        for j in 0..m_use {
            for i in 0..s {
                bq_inv[j * s + i] *= inv[j];
            }
        }
        let dim = if deflate { s + 1 } else { s };
        let mut sys = Mat::zeros(dim, dim);
        // M = I - (BQ inv) Q_s^T
        for col in 0..s {
            for j in 0..m_use {
                let qsj = q_s[j * s + col];
                if qsj == 0.0 {
                    continue;
                }
                for row in 0..s {
                    sys[(row, col)] -= bq_inv[j * s + row] * qsj;
                }
            }
            sys[(col, col)] += 1.0;
        }
        let mut rhs = Mat::zeros(dim, k);
        for l in 0..k {
            for i in 0..s {
                let mut v = ls_us[l * s + i];
                if gamma > 0.0 {
                    let mut acc = 0.0;
                    for j in 0..m_use {
                        acc += bq_inv[j * s + i] * qtp[l * m_use + j];
                    }
                    v += gamma * (u_s_hat[l * s + i] + acc);
                }
                rhs[(i, l)] = v;
            }
        }
        if deflate {
            // Extra unknown c = g^T U hat, the null-space coefficient.
            for i in 0..s {
                sys[(i, s)] = -bq[i];
            }
            for col in 0..s {
                let mut acc = 0.0;
                for j in 1..m_use {
                    acc += h[j] * inv[j] * q_s[j * s + col];
                }
                sys[(s, col)] = -acc;
            }
            sys[(s, s)] = 1.0 - h[0];
            for l in 0..k {
                let mut acc = 0.0;
                for (i, &x) in seed_idx.iter().enumerate() {
                    acc += g[x] * u_s_hat[l * s + i];
                }
                rhs[(s, l)] = acc;
            }
        }
        let lu = Lu::factor(sys)?;
        log::debug!("seed system {dim}x{dim}, condition estimate {:.3e}", lu.condition_estimate());
        lu.solve_in_place(&mut rhs);
        for l in 0..k {
            for j in 0..m_use {
                let mut acc = 0.0;
                for i in 0..s {
                    acc += q_s[j * s + i] * rhs[(i, l)];
                }
                if gamma > 0.0 {
                    acc += gamma * qtp[l * m_use + j];
                }
                c[l * m_use + j] = inv[j] * acc;
            }
            if deflate {
                c[l * m_use] += rhs[(s, l)];
            }
        }
    }

    // Pass 2: U hat = Q C over all rows; seeded rows are overwritten below.
    let mut u_hat = vec![0.0; n * k]; // column-major N x K
    visit_columns(basis, m_use, &mut |start, block| {
        let cols = block.len() / n;
        // C rows start..start+cols as a cols x K column-major block.
        let mut cb = vec![0.0; cols * k];
        for l in 0..k {
            cb[l * cols..(l + 1) * cols].copy_from_slice(&c[l * m_use + start..l * m_use + start + cols]);
        }
        gemm_nn_into(block, &cb, n, cols, k, 1.0, &mut u_hat);
        Ok(())
    })?;

    let mut out = vec![0.0; n * k];
    for x in 0..n {
        if !is_seed[x] {
            for l in 0..k {
                out[x * k + l] = u_hat[l * n + x] / d_sqrt[x];
            }
        }
    }
    for (i, &x) in seed_idx.iter().enumerate() {
        for l in 0..k {
            out[x * k + l] = u_s[l * s + i];
        }
    }
    let deviation = finish_rows(&mut out, k);
    log::debug!("fast solve m_use={m_use}: max row-sum deviation before renormalization {deviation:.3e}");
    ProbabilityField::new(prob.dims(), k, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rw::solve_basic;

    #[test]
    fn three_path_pack_and_solve() {
        let img = Image::new(&[3, 1], vec![0.5; 3]).unwrap();
        let pack = precompute(&img, 1.0, 3, 1e-10).unwrap();
        for (got, want) in pack.basis().values().iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let lap = lattice_laplacian(&img, 1.0).unwrap();
        let prob = LabelProblem::from_seeds(&[3, 1], 2, &[(0, 0), (2, 1)]).unwrap();
        let u = solve_fast(&pack, &lap, &prob, 3).unwrap();
        let want = [1.0, 0.0, 0.5, 0.5, 0.0, 1.0];
        for (a, b) in u.values().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{:?}", u.values());
        }
        assert!(u.max_abs_diff(&solve_basic(&lap, &prob).unwrap()) < 1e-8);
    }

    #[test]
    fn constant_priors_pass_through() {
        let img = Image::new(&[4, 3], (0..12).map(|i| (i % 5) as f64 / 4.0).collect()).unwrap();
        let pack = precompute(&img, 5.0, 4, 1e-10).unwrap();
        let lap = lattice_laplacian(&img, 5.0).unwrap();
        let p = ProbabilityField::new(&[4, 3], 2, [0.3, 0.7].repeat(12)).unwrap();
        let seeds = crate::graph::SeedPartition::empty(12);
        let prob = LabelProblem::new(&[4, 3], 2, seeds, Some(p.clone()), 0.5).unwrap();
        let u = solve_fast(&pack, &lap, &prob, 4).unwrap();
        assert!(u.max_abs_diff(&p) < 1e-12);
    }

    #[test]
    fn too_few_vectors() {
        let img = Image::new(&[3, 1], vec![0.5; 3]).unwrap();
        let pack = precompute(&img, 1.0, 3, 1e-10).unwrap();
        let lap = lattice_laplacian(&img, 1.0).unwrap();
        let prob = LabelProblem::from_seeds(&[3, 1], 3, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert!(matches!(
            solve_fast(&pack, &lap, &prob, 2),
            Err(Error::InsufficientBasis { m_use: 2, labels: 3 })
        ));
    }

    #[test]
    fn nearest_beta_in_log_space() {
        let img = Image::new(&[3, 1], vec![0.1, 0.5, 0.9]).unwrap();
        let packs: Vec<SpectralPack> =
            [25.0, 50.0, 100.0].iter().map(|&b| precompute(&img, b, 1, 1e-10).unwrap()).collect();
        let set = PackSet::new(packs).unwrap();
        assert_eq!(set.nearest(60.0), 1);
        assert_eq!(set.nearest(90.0), 2);
        assert_eq!(set.nearest(50.0), 1);
        assert_eq!(set.nearest(0.0), 0);
    }
}
