//! Interactive segmentation state shared by the command line and the
//! service: an image, its packs, and the basis for the current `beta`.

use std::sync::Arc;
use std::time::Instant;

use fastwalk_core::adaptive::{select_m, AdaptivePolicy};
use fastwalk_core::fast::{lattice_laplacian, solve_fast, PackMeta, PackSet, SpectralBasis, SpectralPack};
use fastwalk_core::graph::{Laplacian, SeedPartition};
use fastwalk_core::image::{hard_labels, Image, LabelMap, ProbabilityField};
use fastwalk_core::refresh::{refresh, RefreshedPack};
use fastwalk_core::rw::{gaussian_seed_priors, LabelProblem};
use fastwalk_core::{Error, Result};
use serde::Serialize;

/// Either a stored pack or one refreshed to another `beta`.
#[derive(Debug, Clone)]
pub enum ActiveBasis {
    Base(Arc<SpectralPack>),
    Refreshed(Box<RefreshedPack<Arc<SpectralPack>>>),
}

impl SpectralBasis for ActiveBasis {
    fn meta(&self) -> &PackMeta {
        match self {
            Self::Base(p) => p.meta(),
            Self::Refreshed(r) => r.meta(),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            Self::Base(p) => SpectralBasis::values(p.as_ref()),
            Self::Refreshed(r) => r.values(),
        }
    }

    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Self::Base(p) => p.read_columns(start, out),
            Self::Refreshed(r) => r.read_columns(start, out),
        }
    }

    fn resident(&self) -> Option<&[f64]> {
        match self {
            Self::Base(p) => p.resident(),
            Self::Refreshed(r) => r.resident(),
        }
    }

    fn leading_null(&self) -> bool {
        match self {
            Self::Base(p) => p.leading_null(),
            Self::Refreshed(r) => r.leading_null(),
        }
    }
}

/// How many columns to use.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisSize {
    All,
    Fixed(usize),
    Adaptive(AdaptivePolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub k: usize,
    pub seeds: usize,
    pub gamma: f64,
    pub beta: f64,
    pub base_beta: f64,
    pub refreshed: bool,
    pub m_use: usize,
    pub m_available: usize,
    pub adaptive_converged: Option<bool>,
    pub online_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub field: ProbabilityField,
    pub labels: LabelMap,
    pub report: SegmentReport,
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    image: Image,
    packs: PackSet,
    beta: f64,
    basis: ActiveBasis,
    lap: Laplacian,
}

impl Segmenter {
    /// Starts at the lowest pack `beta`.
    pub fn new(image: Image, packs: PackSet) -> Result<Self> {
        let hash = image.content_hash();
        if packs.packs().iter().any(|p| p.meta().image_hash != hash || p.dims() != image.dims()) {
            return Err(Error::ImageMismatch);
        }
        let base = packs.packs()[0].clone();
        let beta = base.beta();
        let lap = lattice_laplacian(&image, beta)?;
        Ok(Self { image, packs, beta, basis: ActiveBasis::Base(base), lap })
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn packs(&self) -> &PackSet {
        &self.packs
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn basis(&self) -> &ActiveBasis {
        &self.basis
    }

    pub fn is_refreshed(&self) -> bool {
        matches!(self.basis, ActiveBasis::Refreshed(_))
    }

    pub fn base_beta(&self) -> f64 {
        match &self.basis {
            ActiveBasis::Base(p) => p.beta(),
            ActiveBasis::Refreshed(r) => r.base_beta(),
        }
    }

    /// Switches to `beta`: a stored pack at exactly that value is used as is,
    /// otherwise the nearest pack is refreshed. Returns whether a refresh
    /// happened.
    pub fn set_beta(&mut self, beta: f64) -> Result<bool> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParam(format!("beta must be finite and >= 0, got {beta}")));
        }
        if beta == self.beta {
            return Ok(false);
        }
        let base = self.packs.packs()[self.packs.nearest(beta)].clone();
        let lap = lattice_laplacian(&self.image, beta)?;
        let refreshed = base.beta() != beta;
        self.basis = if refreshed {
            ActiveBasis::Refreshed(Box::new(refresh(base, &self.image, beta)?))
        } else {
            ActiveBasis::Base(base)
        };
        self.lap = lap;
        self.beta = beta;
        Ok(refreshed)
    }

    /// Builds the labeling problem; `gamma > 0` adds priors fitted to the
    /// seed intensities.
    pub fn problem(&self, seeds: &[(usize, usize)], k: Option<usize>, gamma: f64) -> Result<LabelProblem> {
        let n = self.image.len();
        let k = k.unwrap_or_else(|| seeds.iter().map(|s| s.1 + 1).max().unwrap_or(0).max(2));
        let partition = SeedPartition::new(n, seeds)?;
        let priors = if gamma > 0.0 { Some(gaussian_seed_priors(&self.image, &partition, k)?) } else { None };
        LabelProblem::new(self.image.dims(), k, partition, priors, gamma)
    }

    pub fn solve(&self, prob: &LabelProblem, size: &BasisSize) -> Result<SegmentOutcome> {
        let start = Instant::now();
        let m_available = self.basis.m();
        let (m_use, adaptive_converged) = match size {
            BasisSize::All => (m_available, None),
            BasisSize::Fixed(m) => ((*m).min(m_available), None),
            BasisSize::Adaptive(policy) => {
                let sel = select_m(&self.basis, &self.lap, prob, policy)?;
                (sel.m_use, Some(sel.converged))
            }
        };
        let field = solve_fast(&self.basis, &self.lap, prob, m_use)?;
        let online_ms = start.elapsed().as_secs_f64() * 1e3;
        let labels = hard_labels(&field);
        let report = SegmentReport {
            k: prob.k(),
            seeds: prob.seeds().len(),
            gamma: prob.gamma(),
            beta: self.beta,
            base_beta: self.base_beta(),
            refreshed: self.is_refreshed(),
            m_use,
            m_available,
            adaptive_converged,
            online_ms,
        };
        Ok(SegmentOutcome { field, labels, report })
    }
}
