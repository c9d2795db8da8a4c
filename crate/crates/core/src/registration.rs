//! Registration as labeling: every label is a displacement, priors come from
//! patch similarity, and the result is read out as the expected displacement.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::adaptive::{select_m, AdaptivePolicy};
use crate::aggregate::{build_aggregation, coarsen_basis, direct_aggregate_basis, propagate, Coarsening};
use crate::error::{Error, Result};
use crate::fast::{lattice_laplacian, solve_fast, SpectralBasis};
use crate::graph::{build_graph, Neighborhood, SeedPartition};
use crate::image::{Grid, Image, LabelMap, ProbabilityField};
use crate::linalg::EigOptions;
use crate::rw::{solve_basic_with, BasicOptions, LabelProblem};

pub const DEFAULT_BETA: f64 = 50.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_PATCH_RADIUS: usize = 2;

/// A regular set of integer displacements centred on zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisplacementGrid {
    extents: Vec<usize>,
    step: usize,
    vectors: Vec<i64>,
}

impl DisplacementGrid {
    /// `extents` are odd label counts per axis; displacements are multiples
    /// of `step`. Label 0 is the most negative corner, x varies fastest.
    pub fn new(extents: &[usize], step: usize) -> Result<Self> {
        if !(2..=3).contains(&extents.len()) {
            return Err(Error::InvalidParam("displacement grids are 2D or 3D".into()));
        }
        if extents.iter().any(|&e| e == 0 || e % 2 == 0) || step == 0 {
            return Err(Error::InvalidParam(alloc::format!(
                "extents must be odd and step positive, got {extents:?} / {step}"
            )));
        }
        let k: usize = extents.iter().product();
        let d = extents.len();
        let mut vectors = Vec::with_capacity(k * d);
        for label in 0..k {
            let mut rem = label;
            for &e in extents {
                let c = (rem % e) as i64 - (e / 2) as i64;
                vectors.push(c * step as i64);
                rem /= e;
            }
        }
        Ok(Self { extents: extents.to_vec(), step, vectors })
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn ndim(&self) -> usize {
        self.extents.len()
    }

    /// Number of labels.
    pub fn k(&self) -> usize {
        self.vectors.len() / self.ndim()
    }

    pub fn vector(&self, label: usize) -> &[i64] {
        let d = self.ndim();
        &self.vectors[label * d..(label + 1) * d]
    }

    /// The label of the zero displacement.
    pub fn zero_label(&self) -> usize {
        let mut label = 0;
        let mut stride = 1;
        for &e in &self.extents {
            label += (e / 2) * stride;
            stride *= e;
        }
        label
    }

    /// The label of `v`, if it is on the grid.
    pub fn label_of(&self, v: &[i64]) -> Option<usize> {
        (0..self.k()).find(|&l| self.vector(l) == v)
    }

    /// Labels on the sub-grid taking every `r`-th label per axis, starting at
    /// the most negative corner.
    pub fn strided_labels(&self, r: usize) -> Vec<usize> {
        let r = r.max(1);
        (0..self.k())
            .filter(|&label| {
                let mut rem = label;
                self.extents.iter().all(|&e| {
                    let c = rem % e;
                    rem /= e;
                    c % r == 0
                })
            })
            .collect()
    }
}

/// A real displacement vector per voxel, in voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DisplacementField {
    /// `data` holds `dims.len()` components per voxel, voxel-major.
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        if data.len() != n * dims.len() {
            return Err(Error::DimsMismatch { expected: vec![n, dims.len()], found: vec![data.len()] });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("displacements must be finite".into()));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        Self::new(dims, vec![0.0; n * dims.len()])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.ndim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        let d = self.ndim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Largest Euclidean length over all voxels.
    pub fn max_norm(&self) -> f64 {
        (0..self.len()).map(|i| self.vector(i).iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Mean Euclidean distance to `other` over voxels at least `margin` away
    /// from every border.
    pub fn mean_endpoint_error(&self, other: &Self, margin: usize) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch { expected: self.dims.clone(), found: other.dims.clone() });
        }
        let grid = Grid::new(&self.dims)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..self.len() {
            if !interior(&grid, i, margin) {
                continue;
            }
            let e: f64 = self.vector(i).iter().zip(other.vector(i)).map(|(a, b)| (a - b) * (a - b)).sum();
            sum += e.sqrt();
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidParam(alloc::format!("margin {margin} leaves no interior voxels")));
        }
        Ok(sum / count as f64)
    }
}

/// Whether voxel `i` lies at least `margin` voxels inside every border.
pub fn interior(grid: &Grid, i: usize, margin: usize) -> bool {
    let c = grid.coords(i);
    (0..grid.ndim()).all(|a| c[a] >= margin && c[a] + margin < grid.dims()[a])
}

/// Patch dissimilarity `s_k(x)`, row-major `N x K`: the mean absolute
/// difference between the fixed patch at `x` and the moving patch at
/// `x + d_k`, samples clamped to the image.
pub fn patch_differences(
    fixed: &Image,
    moving: &Image,
    grid: &DisplacementGrid,
    patch_radius: usize,
) -> Result<Vec<f64>> {
    if fixed.dims() != moving.dims() {
        return Err(Error::DimsMismatch { expected: fixed.dims().to_vec(), found: moving.dims().to_vec() });
    }
    let ig = fixed.grid();
    if grid.ndim() != ig.ndim() {
        return Err(Error::DimsMismatch { expected: vec![ig.ndim()], found: vec![grid.ndim()] });
    }
    let n = ig.len();
    let k = grid.k();
    let d = ig.ndim();
    let r = patch_radius as i64;
    let mut offsets: Vec<[i64; 3]> = Vec::new();
    let span = |a: usize| if a < d { -r..=r } else { 0..=0 };
    for oz in span(2) {
        for oy in span(1) {
            for ox in span(0) {
                offsets.push([ox, oy, oz]);
            }
        }
    }
    let inv_p = 1.0 / offsets.len() as f64;
    let (f, mv) = (fixed.data(), moving.data());
    let mut s = vec![0.0; n * k];
    for x in 0..n {
        let c = ig.coords(x);
        for label in 0..k {
            let dv = grid.vector(label);
            let mut acc = 0.0;
            for o in &offsets {
                let a = ig.clamped_offset(&c, o);
                let mut shifted = *o;
                for (axis, sv) in shifted.iter_mut().enumerate().take(d) {
                    *sv += dv[axis];
                }
                let b = ig.clamped_offset(&c, &shifted);
                acc += (f[a] - mv[b]).abs();
            }
            s[x * k + label] = acc * inv_p;
        }
    }
    Ok(s)
}

/// `exp(-s^2 / sigma^2)` normalized per row. A zero `sigma` is the limit:
/// the mass is shared by the row minima.
pub fn priors_from_differences(dims: &[usize], k: usize, s: &[f64], sigma: f64) -> Result<ProbabilityField> {
    let n = s.len() / k.max(1);
    let mut p = vec![0.0; n * k];
    for x in 0..n {
        let row = &s[x * k..(x + 1) * k];
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let out = &mut p[x * k..(x + 1) * k];
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(row) {
            *o = if sigma > 0.0 {
                // Shifted by the row minimum so the largest term is exp(0).
                (-(v * v - min * min) / (sigma * sigma)).exp()
            } else if v == min {
                1.0
            } else {
                0.0
            };
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }
    ProbabilityField::new(dims, k, p)
}

/// Patch dissimilarity priors `exp(-s^2 / sigma^2)`, normalized per voxel,
/// with `sigma` the mean best-match difference. Identical patches give
/// `sigma = 0` and all mass goes to the exact matches.
pub fn similarity_priors(
    fixed: &Image,
    moving: &Image,
    grid: &DisplacementGrid,
    patch_radius: usize,
) -> Result<ProbabilityField> {
    let s = patch_differences(fixed, moving, grid, patch_radius)?;
    let k = grid.k();
    let sigma = prior_scale(&s, k);
    priors_from_differences(fixed.dims(), k, &s, sigma)
}

/// Mean over voxels of the best-match difference `min_k s_k(x)`. This is
/// the residual left at the right displacement, so a wrong label has to be
/// worse than typical noise to lose weight.
fn prior_scale(s: &[f64], k: usize) -> f64 {
    let n = s.len() / k.max(1);
    let total: f64 = s.chunks(k.max(1)).map(|row| row.iter().cloned().fold(f64::INFINITY, f64::min)).sum();
    total / n.max(1) as f64
}

/// `sum_k U[x, k] d_k` per voxel.
pub fn expected_displacement(u: &ProbabilityField, grid: &DisplacementGrid) -> Result<DisplacementField> {
    if u.k() != grid.k() {
        return Err(Error::DimsMismatch { expected: vec![grid.k()], found: vec![u.k()] });
    }
    let d = grid.ndim();
    if u.dims().len() != d {
        return Err(Error::DimsMismatch { expected: vec![d], found: vec![u.dims().len()] });
    }
    let mut data = vec![0.0; u.len() * d];
    for x in 0..u.len() {
        for (label, &w) in u.row(x).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, &dv) in grid.vector(label).iter().enumerate() {
                data[x * d + a] += w * dv as f64;
            }
        }
    }
    DisplacementField::new(u.dims(), data)
}

/// Nearest-neighbour pullback `out(x) = labels(round(x + field(x)))`,
/// clamped to the image.
pub fn warp_labels(labels: &LabelMap, field: &DisplacementField) -> Result<LabelMap> {
    if labels.dims() != field.dims() {
        return Err(Error::DimsMismatch { expected: labels.dims().to_vec(), found: field.dims().to_vec() });
    }
    let grid = Grid::new(labels.dims())?;
    let src = labels.labels();
    let out = (0..labels.len())
        .map(|x| {
            let c = grid.coords(x);
            let mut off = [0i64; 3];
            for (a, &v) in field.vector(x).iter().enumerate() {
                off[a] = v.round() as i64;
            }
            src[grid.clamped_offset(&c, &off)]
        })
        .collect();
    LabelMap::new(labels.dims(), out)
}

/// Milliseconds from some fixed origin; lets timing work without `std`.
pub trait Clock {
    fn now_ms(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> f64 {
        0.0
    }
}

/// How the aggregate basis is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateBasis {
    Coarsen(Coarsening),
    /// Eigensolve on the aggregate graph itself.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOptions {
    pub max_radius: usize,
    pub similarity_tol: f64,
    pub basis: AggregateBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterOptions {
    /// Edge weight contrast; ignored when a basis is given (its own beta is
    /// used).
    pub beta: f64,
    pub gamma: f64,
    pub patch_radius: usize,
    /// `(voxel, label)` pairs fixing a displacement.
    pub landmarks: Vec<(usize, usize)>,
    /// Columns to use; all of them when neither this nor `adaptive` is set.
    pub m_use: Option<usize>,
    pub adaptive: Option<AdaptivePolicy>,
    pub aggregation: Option<AggregationOptions>,
    pub basic: BasicOptions,
    pub eig: EigOptions,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            patch_radius: DEFAULT_PATCH_RADIUS,
            landmarks: Vec::new(),
            m_use: None,
            adaptive: None,
            aggregation: None,
            basic: BasicOptions::default(),
            eig: EigOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegistrationReport {
    pub method: String,
    pub beta: f64,
    pub gamma: f64,
    pub m_use: Option<usize>,
    /// Super-vertex count when aggregated.
    pub n_bar: Option<usize>,
    /// False when adaptive selection fell back to the whole basis.
    pub adaptive_converged: Option<bool>,
    pub priors_ms: f64,
    pub aggregate_ms: f64,
    pub solve_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub probabilities: ProbabilityField,
    pub displacement: DisplacementField,
    pub report: RegistrationReport,
}

/// Priors, optional aggregation, optional adaptive size, then a fast solve
/// when `basis` is given and an exact solve otherwise.
pub fn register<B: SpectralBasis + ?Sized>(
    fixed: &Image,
    moving: &Image,
    basis: Option<&B>,
    grid: &DisplacementGrid,
    opts: &RegisterOptions,
    clock: &dyn Clock,
) -> Result<Registration> {
    let t0 = clock.now_ms();
    if let Some(b) = basis {
        if b.meta().image_hash != fixed.content_hash() || b.meta().dims != fixed.dims() {
            return Err(Error::ImageMismatch);
        }
    }
    let beta = basis.map_or(opts.beta, |b| b.meta().beta);
    let priors = similarity_priors(fixed, moving, grid, opts.patch_radius)?;
    let t_priors = clock.now_ms();
    let seeds = SeedPartition::new(fixed.len(), &opts.landmarks)?;
    let prob = LabelProblem::new(fixed.dims(), grid.k(), seeds, Some(priors), opts.gamma)?;
    let mut report = RegistrationReport { beta, gamma: opts.gamma, ..Default::default() };
    let policy = opts.adaptive.clone().map(|mut p| {
        if p.prior_labels.is_none() {
            p.prior_labels = Some(grid.strided_labels(p.stride));
        }
        p
    });

    let probabilities = if let Some(agg_opts) = &opts.aggregation {
        let lattice = build_graph(fixed, beta, Neighborhood::for_ndim(fixed.dims().len()))?;
        let agg = build_aggregation(prob.priors().expect("set above"), agg_opts.max_radius, agg_opts.similarity_tol)?;
        let agg_prob = agg.aggregate_problem(&prob)?;
        let agg_lap = agg.laplacian(lattice.graph())?;
        report.n_bar = Some(agg.n_bar());
        let t_agg = clock.now_ms();
        report.aggregate_ms = t_agg - t_priors;
        let u_bar = match basis {
            Some(b) => {
                let coarse = match agg_opts.basis {
                    AggregateBasis::Coarsen(v) => coarsen_basis(b, &agg, lattice.graph(), v)?,
                    AggregateBasis::Direct => direct_aggregate_basis(b, &agg, lattice.graph(), b.m(), &opts.eig)?,
                };
                report.method = alloc::format!("aggregate-{}", aggregate_name(agg_opts.basis));
                let m_use = choose_m(&coarse, &agg_lap, &agg_prob, opts, policy.as_ref(), &mut report)?;
                solve_fast(&coarse, &agg_lap, &agg_prob, m_use)?
            }
            None => {
                report.method = "aggregate-basic".into();
                solve_basic_with(&agg_lap, &agg_prob, &opts.basic)?
            }
        };
        report.solve_ms = clock.now_ms() - t_agg;
        propagate(&u_bar, &agg)?
    } else {
        let lap = lattice_laplacian(fixed, beta)?;
        let t_lap = clock.now_ms();
        let u = match basis {
            Some(b) => {
                report.method = "fast".into();
                let m_use = choose_m(b, &lap, &prob, opts, policy.as_ref(), &mut report)?;
                solve_fast(b, &lap, &prob, m_use)?
            }
            None => {
                report.method = "basic".into();
                solve_basic_with(&lap, &prob, &opts.basic)?
            }
        };
        report.solve_ms = clock.now_ms() - t_lap;
        u
    };
    let displacement = expected_displacement(&probabilities, grid)?;
    report.priors_ms = t_priors - t0;
    report.total_ms = clock.now_ms() - t0;
    Ok(Registration { probabilities, displacement, report })
}

fn aggregate_name(b: AggregateBasis) -> &'static str {
    match b {
        AggregateBasis::Coarsen(v) => v.name(),
        AggregateBasis::Direct => "direct",
    }
}

fn choose_m<B: SpectralBasis + ?Sized>(
    basis: &B,
    lap: &crate::graph::Laplacian,
    prob: &LabelProblem,
    opts: &RegisterOptions,
    policy: Option<&AdaptivePolicy>,
    report: &mut RegistrationReport,
) -> Result<usize> {
    let m = if let Some(m) = opts.m_use {
        m.min(basis.m())
    } else if let Some(p) = policy {
        let sel = select_m(basis, lap, prob, p)?;
        report.adaptive_converged = Some(sel.converged);
        sel.m_use
    } else {
        basis.m()
    };
    report.m_use = Some(m);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout() {
        let g = DisplacementGrid::new(&[3, 3], 1).unwrap();
        assert_eq!(g.k(), 9);
        assert_eq!(g.vector(0), &[-1, -1]);
        assert_eq!(g.vector(1), &[0, -1]);
        assert_eq!(g.zero_label(), 4);
        assert_eq!(g.vector(4), &[0, 0]);
        assert_eq!(g.label_of(&[1, 1]), Some(8));
        assert!(DisplacementGrid::new(&[4, 3], 1).is_err());
        let g7 = DisplacementGrid::new(&[7, 7], 1).unwrap();
        assert_eq!(g7.strided_labels(4).len(), 4);
    }

    #[test]
    fn expected_displacement_cases() {
        let g = DisplacementGrid::new(&[3, 3], 1).unwrap();
        let right = g.label_of(&[1, 0]).unwrap();
        let left = g.label_of(&[-1, 0]).unwrap();
        let mut v = vec![0.0; 9 * 2];
        v[right] = 1.0;
        v[9 + left] = 0.5;
        v[9 + right] = 0.5;
        let u = ProbabilityField::new(&[2, 1], 9, v).unwrap();
        let f = expected_displacement(&u, &g).unwrap();
        assert_eq!(f.vector(0), &[1.0, 0.0]);
        assert_eq!(f.vector(1), &[0.0, 0.0]);
        let uni = ProbabilityField::uniform(&[2, 1], 9).unwrap();
        assert!(expected_displacement(&uni, &g).unwrap().max_norm() < 1e-15);
    }

    #[test]
    fn warp_is_clamped_pullback() {
        let labels = LabelMap::new(&[4, 1], vec![0, 1, 2, 3]).unwrap();
        let zero = DisplacementField::zeros(&[4, 1]).unwrap();
        assert_eq!(warp_labels(&labels, &zero).unwrap(), labels);
        let out = DisplacementField::new(&[4, 1], [5.0, 0.0].repeat(4)).unwrap();
        assert_eq!(warp_labels(&labels, &out).unwrap().labels(), &[3, 3, 3, 3]);
    }

    #[test]
    fn constant_images_give_uniform_priors() {
        let img = Image::new(&[5, 5], vec![0.3; 25]).unwrap();
        let g = DisplacementGrid::new(&[3, 3], 1).unwrap();
        let p = similarity_priors(&img, &img, &g, 1).unwrap();
        assert!(p.values().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn self_similarity_puts_the_most_mass_on_zero() {
        let data: Vec<f64> = (0..36).map(|i| ((i * 7) % 11) as f64 / 10.0).collect();
        let img = Image::new(&[6, 6], data).unwrap();
        let g = DisplacementGrid::new(&[3, 3], 1).unwrap();
        let p = similarity_priors(&img, &img, &g, 1).unwrap();
        let z = g.zero_label();
        for x in 0..36 {
            let row = p.row(x);
            assert!((0..9).filter(|&l| l != z).all(|l| row[l] < row[z]), "voxel {x}");
        }
    }
}
