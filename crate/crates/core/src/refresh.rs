//! Reusing precomputed eigenvectors after `beta` changes: the stored values
//! are replaced by Rayleigh quotients against the new normalized Laplacian.
//!
//! A stored column `q` is the relaxed cut `v = D'^{-1/2} q` written in the
//! normalized coordinates of the old degrees `D'`. When the degrees change,
//! the same cut reads `D^{1/2} v` in the new coordinates, so columns are
//! carried over that way before their quotients are taken. The base null
//! vector becomes the exact new one and the other columns are made
//! orthogonal to it. Without this step a `gamma = 0` solve loses the null
//! direction and nearly disconnected regions stop looking like cheap cuts.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fast::{lattice_laplacian, visit_columns, PackMeta, PackSet, SpectralBasis, SpectralPack};
use crate::graph::{Laplacian, LaplacianMode};
use crate::image::Image;
use crate::linalg::dense::{dot, norm};

/// `q^T L q / q^T q`.
pub fn ncut_value(lap: &Laplacian, q: &[f64]) -> Result<f64> {
    let qq = dot(q, q);
    if !(qq > 0.0) {
        return Err(Error::ZeroVector);
    }
    Ok(lap.matrix().quadratic_form(q) / qq)
}

/// Carries base columns into the new normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Reweight {
    /// `D^{1/2} / D'^{1/2}` per voxel.
    scale: Vec<f64>,
    /// Unit null vector of the new Laplacian, when the base has one first.
    null: Option<Vec<f64>>,
    /// Per base column: component along `null`, then norm after removing it.
    proj: Vec<f64>,
    norms: Vec<f64>,
}

impl Reweight {
    fn new(old: &[f64], new: &[f64], with_null: bool, m: usize) -> Option<Self> {
        if old == new {
            return None;
        }
        let scale = old.iter().zip(new).map(|(o, n)| n / o).collect();
        let null = with_null.then(|| {
            let nrm = norm(new);
            new.iter().map(|v| v / nrm).collect()
        });
        Some(Self { scale, null, proj: vec![0.0; m], norms: vec![1.0; m] })
    }

    /// Records the null component and remaining norm of base column `j`.
    fn learn(&mut self, j: usize, q: &[f64]) -> Result<()> {
        if j == 0 && self.null.is_some() {
            return Ok(());
        }
        let scaled: Vec<f64> = q.iter().zip(&self.scale).map(|(v, s)| v * s).collect();
        let c = self.null.as_ref().map_or(0.0, |g| dot(g, &scaled));
        let nrm2 = dot(&scaled, &scaled) - c * c;
        if !(nrm2 > 1e-24) {
            return Err(Error::ZeroVector);
        }
        self.proj[j] = c;
        self.norms[j] = nrm2.sqrt();
        Ok(())
    }

    /// Base column `j`, `q`, in the new coordinates.
    fn read(&self, j: usize, q: &[f64], out: &mut [f64]) {
        match &self.null {
            Some(g) if j == 0 => out.copy_from_slice(g),
            Some(g) => {
                let (c, inv) = (self.proj[j], 1.0 / self.norms[j]);
                for (((o, &v), &s), &gv) in out.iter_mut().zip(q).zip(&self.scale).zip(g) {
                    *o = (v * s - c * gv) * inv;
                }
            }
            None => {
                let inv = 1.0 / self.norms[j];
                for ((o, &v), &s) in out.iter_mut().zip(q).zip(&self.scale) {
                    *o = v * s * inv;
                }
            }
        }
    }
}

/// A base basis with values re-evaluated at a new `beta`, columns re-sorted
/// by the new values.
#[derive(Debug, Clone)]
pub struct RefreshedPack<B> {
    base: B,
    meta: PackMeta,
    lambda_hat: Vec<f64>,
    order: Vec<usize>,
    reweight: Option<Reweight>,
}

impl<B: SpectralBasis> RefreshedPack<B> {
    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn base_beta(&self) -> f64 {
        self.base.meta().beta
    }

    pub fn new_beta(&self) -> f64 {
        self.meta.beta
    }

    pub fn lambda_hat(&self) -> &[f64] {
        &self.lambda_hat
    }

    /// Position in the base of each refreshed column.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// False when the degrees did not change and columns are read verbatim.
    pub fn is_reweighted(&self) -> bool {
        self.reweight.is_some()
    }
}

impl<B: SpectralBasis> SpectralBasis for RefreshedPack<B> {
    fn meta(&self) -> &PackMeta {
        &self.meta
    }

    fn values(&self) -> &[f64] {
        &self.lambda_hat
    }

    fn read_columns(&self, start: usize, out: &mut [f64]) -> Result<()> {
        let n = self.meta.len();
        let count = out.len() / n.max(1);
        if start + count > self.order.len() {
            return Err(Error::Index { index: start + count, len: self.order.len() });
        }
        let resident = self.base.resident();
        let mut tmp = match (&self.reweight, resident) {
            (Some(_), None) => vec![0.0; n],
            _ => Vec::new(),
        };
        for (c, &j) in self.order[start..start + count].iter().enumerate() {
            let dst = &mut out[c * n..(c + 1) * n];
            match (&self.reweight, resident) {
                (None, Some(q)) => dst.copy_from_slice(&q[j * n..(j + 1) * n]),
                (None, None) => self.base.read_columns(j, dst)?,
                (Some(r), Some(q)) => r.read(j, &q[j * n..(j + 1) * n], dst),
                (Some(r), None) => {
                    self.base.read_columns(j, &mut tmp)?;
                    r.read(j, &tmp, dst);
                }
            }
        }
        Ok(())
    }

    fn resident(&self) -> Option<&[f64]> {
        let identity = self.order.iter().enumerate().all(|(i, &j)| i == j);
        if identity && self.reweight.is_none() {
            self.base.resident()
        } else {
            None
        }
    }

    /// The base null column maps to the exact new null vector, so it is
    /// deflated whenever it still sorts first.
    fn leading_null(&self) -> bool {
        self.base.leading_null() && self.order.first() == Some(&0)
    }
}

/// Rayleigh quotients of every base column, carried into the coordinates of
/// `new_lap`, against `new_lap`.
pub fn refresh_with_laplacian<B: SpectralBasis>(base: B, new_lap: &Laplacian, new_beta: f64) -> Result<RefreshedPack<B>> {
    if new_lap.mode() != LaplacianMode::Normalized {
        return Err(Error::InvalidParam("refresh needs the normalized Laplacian".into()));
    }
    let n = base.n();
    if new_lap.len() != n {
        return Err(Error::DimsMismatch { expected: vec![n], found: vec![new_lap.len()] });
    }
    let m = base.m();
    let new_d = new_lap.d_sqrt().expect("normalized");
    let mut reweight = Reweight::new(&base.meta().d_sqrt, new_d, base.leading_null(), m);
    let mut values = vec![0.0; m];
    let mut col = vec![0.0; n];
    visit_columns(&base, m, &mut |start, block| {
        for (c, q) in block.chunks_exact(n).enumerate() {
            let j = start + c;
            let v = match reweight.as_mut() {
                Some(r) => {
                    r.learn(j, q)?;
                    r.read(j, q, &mut col);
                    ncut_value(new_lap, &col)?
                }
                None => ncut_value(new_lap, q)?,
            };
            if v < -1e-10 {
                log::warn!("negative Rayleigh quotient {v:e} for column {j}");
            }
            values[j] = v.max(0.0);
        }
        Ok(())
    })?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let lambda_hat = order.iter().map(|&j| values[j]).collect();
    let mut meta = base.meta().clone();
    meta.beta = new_beta;
    meta.d_sqrt = new_d.to_vec();
    Ok(RefreshedPack { base, meta, lambda_hat, order, reweight })
}

/// Refreshes `base` to `new_beta` on the image it was built from.
pub fn refresh<B: SpectralBasis>(base: B, image: &Image, new_beta: f64) -> Result<RefreshedPack<B>> {
    if !(new_beta >= 0.0) {
        return Err(Error::InvalidParam(alloc::format!("beta must be >= 0, got {new_beta}")));
    }
    if image.content_hash() != base.meta().image_hash || image.dims() != base.meta().dims.as_slice() {
        return Err(Error::ImageMismatch);
    }
    let lap = lattice_laplacian(image, new_beta)?;
    refresh_with_laplacian(base, &lap, new_beta)
}

/// Refreshes the pack whose `beta` is nearest to `new_beta` in log distance.
pub fn refresh_from_set(set: &PackSet, image: &Image, new_beta: f64) -> Result<RefreshedPack<Arc<SpectralPack>>> {
    let base = set.packs()[set.nearest(new_beta)].clone();
    refresh(base, image, new_beta)
}
