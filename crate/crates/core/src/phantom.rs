//! Deterministic synthetic images with ground truth.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{Grid, Image, LabelMap};
use crate::registration::DisplacementField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhantomKind {
    /// A few smooth random regions with distinct intensity levels.
    Blobs2d,
    /// Disjoint bright discs (label 1) on a dark background (label 0).
    Cells2d,
    Blobs3d,
    /// Textured fixed image plus a moving copy translated by a known shift.
    ShiftedPair,
}

impl PhantomKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Blobs2d => "blobs2d",
            Self::Cells2d => "cells2d",
            Self::Blobs3d => "blobs3d",
            Self::ShiftedPair => "shifted_pair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "blobs2d" => Some(Self::Blobs2d),
            "cells2d" => Some(Self::Cells2d),
            "blobs3d" => Some(Self::Blobs3d),
            "shifted_pair" => Some(Self::ShiftedPair),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub kind: PhantomKind,
    pub seed: u64,
    pub image: Image,
    pub labels: LabelMap,
    /// Number of labels in `labels`.
    pub k: usize,
    /// Moving image and its labels (shifted pairs only).
    pub moving: Option<(Image, LabelMap)>,
    /// Integer shift taking fixed content to moving content.
    pub shift: Option<Vec<i64>>,
}

impl Phantom {
    /// The constant field equal to the shift, when there is one.
    pub fn ground_truth_field(&self) -> Option<DisplacementField> {
        let shift = self.shift.as_ref()?;
        let n = self.image.len();
        let d = shift.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend(shift.iter().map(|&s| s as f64));
        }
        DisplacementField::new(self.image.dims(), data).ok()
    }
}

/// Number of regions in the blob phantoms.
pub const BLOB_LABELS: usize = 3;
/// Number of intensity classes the shifted pair's labels quantize into.
pub const PAIR_LABELS: usize = 3;

/// Default shift of the shifted pair: +2 voxels along x, +1 along y.
pub const DEFAULT_SHIFT: [i64; 3] = [2, 1, 0];

pub fn make_phantom(kind: PhantomKind, dims: &[usize], seed: u64, noise_sigma: f64) -> Result<Phantom> {
    let shift: Vec<i64> = DEFAULT_SHIFT[..dims.len()].to_vec();
    make_phantom_with_shift(kind, dims, seed, noise_sigma, &shift)
}

pub fn make_phantom_with_shift(
    kind: PhantomKind,
    dims: &[usize],
    seed: u64,
    noise_sigma: f64,
    shift: &[i64],
) -> Result<Phantom> {
    let grid = Grid::new(dims)?;
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidParam("noise_sigma must be finite and >= 0".into()));
    }
    let want_ndim = match kind {
        PhantomKind::Blobs2d | PhantomKind::Cells2d => Some(2),
        PhantomKind::Blobs3d => Some(3),
        PhantomKind::ShiftedPair => None,
    };
    if want_ndim.is_some_and(|d| d != grid.ndim()) {
        return Err(Error::InvalidParam(alloc::format!(
            "{} needs {}D dims",
            kind.name(),
            want_ndim.unwrap_or(0)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = match kind {
        PhantomKind::Blobs2d | PhantomKind::Blobs3d => blobs(&grid, &mut rng, noise_sigma)?,
        PhantomKind::Cells2d => cells(&grid, &mut rng, noise_sigma)?,
        PhantomKind::ShiftedPair => {
            if shift.len() != grid.ndim() {
                return Err(Error::InvalidParam("shift must have one entry per axis".into()));
            }
            shifted_pair(&grid, &mut rng, noise_sigma, shift)?
        }
    };
    p.kind = kind;
    p.seed = seed;
    Ok(p)
}

fn level(k: usize, count: usize) -> f64 {
    if count <= 1 {
        0.5
    } else {
        0.2 + 0.6 * k as f64 / (count - 1) as f64
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
}

fn add_noise(data: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in data.iter_mut() {
        *v = (*v + sigma * gaussian(rng)).clamp(0.0, 1.0);
    }
}

fn coords_f(grid: &Grid, x: usize) -> [f64; 3] {
    let c = grid.coords(x);
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

struct Bump {
    center: [f64; 3],
    width: f64,
    amp: f64,
}

/// Face-adjacent neighbors of `x`.
fn neighbors(grid: &Grid, x: usize) -> impl Iterator<Item = usize> + '_ {
    let c = grid.coords(x);
    (0..grid.ndim()).flat_map(move |a| {
        let s = grid.strides()[a];
        let lo = (c[a] > 0).then(|| x - s);
        let hi = (c[a] + 1 < grid.dims()[a]).then(|| x + s);
        lo.into_iter().chain(hi)
    })
}

/// Keeps the largest connected piece of every label and hands the other
/// pieces to whichever kept region grows into them first, so each region is
/// one component.
fn connect_regions(grid: &Grid, labels: &mut [u16]) {
    let n = labels.len();
    let mut comp = vec![usize::MAX; n];
    let mut sizes: Vec<(u16, usize)> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(x) = stack.pop() {
            size += 1;
            for y in neighbors(grid, x) {
                if comp[y] == usize::MAX && labels[y] == l {
                    comp[y] = id;
                    stack.push(y);
                }
            }
        }
        sizes.push((l, size));
    }
    let mut largest: Vec<Option<usize>> = vec![None; 1 + labels.iter().copied().max().unwrap_or(0) as usize];
    for (id, &(l, size)) in sizes.iter().enumerate() {
        let best = &mut largest[l as usize];
        if best.map_or(true, |b| sizes[b].1 < size) {
            *best = Some(id);
        }
    }
    let mut kept: Vec<bool> = (0..n).map(|x| largest[labels[x] as usize] == Some(comp[x])).collect();
    let mut frontier: Vec<usize> = (0..n).filter(|&x| kept[x]).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &x in &frontier {
            for y in neighbors(grid, x) {
                if !kept[y] {
                    kept[y] = true;
                    labels[y] = labels[x];
                    next.push(y);
                }
            }
        }
        frontier = next;
    }
}

fn blobs(grid: &Grid, rng: &mut ChaCha8Rng, noise: f64) -> Result<Phantom> {
    let n = grid.len();
    let d = grid.ndim();
    let dims = grid.dims();
    let scale = dims.iter().copied().fold(0, usize::max) as f64;
    for _attempt in 0..64 {
        let fields: Vec<Vec<Bump>> = (0..BLOB_LABELS)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let mut center = [0.0; 3];
                        for a in 0..d {
                            center[a] = rng.random::<f64>() * (dims[a] as f64 - 1.0);
                        }
                        Bump {
                            center,
                            width: scale * (0.15 + 0.2 * rng.random::<f64>()),
                            amp: 0.5 + rng.random::<f64>(),
                        }
                    })
                    .collect()
            })
            .collect();
        let mut labels = vec![0u16; n];
        for (x, lab) in labels.iter_mut().enumerate() {
            let c = coords_f(grid, x);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (k, bumps) in fields.iter().enumerate() {
                let v: f64 = bumps
                    .iter()
                    .map(|b| {
                        let r2: f64 = (0..d).map(|a| (c[a] - b.center[a]).powi(2)).sum();
                        b.amp * (-r2 / (2.0 * b.width * b.width)).exp()
                    })
                    .sum();
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            *lab = best as u16;
        }
        connect_regions(grid, &mut labels);
        let mut counts = [0usize; BLOB_LABELS];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        // Every region must be reasonably sized.
        if counts.iter().any(|&c| c < n / 20) {
            continue;
        }
        let mut data: Vec<f64> = labels.iter().map(|&l| level(l as usize, BLOB_LABELS)).collect();
        add_noise(&mut data, noise, rng);
        return Ok(Phantom {
            kind: PhantomKind::Blobs2d,
            seed: 0,
            image: Image::new(dims, data)?,
            labels: LabelMap::new(dims, labels)?,
            k: BLOB_LABELS,
            moving: None,
            shift: None,
        });
    }
    Err(Error::InvalidParam("dims too small for a blob phantom".into()))
}

fn cells(grid: &Grid, rng: &mut ChaCha8Rng, noise: f64) -> Result<Phantom> {
    let dims = grid.dims();
    let (w, h) = (dims[0] as f64, dims[1] as f64);
    let radius = (w.min(h) / 10.0).max(1.5);
    let target = ((w * h) / (16.0 * radius * radius)).ceil().max(2.0) as usize;
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for _ in 0..target * 200 {
        if centers.len() >= target {
            break;
        }
        let cx = radius + rng.random::<f64>() * (w - 2.0 * radius).max(0.0);
        let cy = radius + rng.random::<f64>() * (h - 2.0 * radius).max(0.0);
        let min_gap = 2.0 * radius + 2.0;
        if centers.iter().all(|&(x, y)| (x - cx).hypot(y - cy) >= min_gap) {
            centers.push((cx, cy));
        }
    }
    let labels: Vec<u16> = (0..grid.len())
        .map(|i| {
            let c = coords_f(grid, i);
            let inside = centers.iter().any(|&(x, y)| (c[0] - x).hypot(c[1] - y) <= radius);
            inside as u16
        })
        .collect();
    let mut data: Vec<f64> = labels.iter().map(|&l| level(l as usize, 2)).collect();
    add_noise(&mut data, noise, rng);
    Ok(Phantom {
        kind: PhantomKind::Cells2d,
        seed: 0,
        image: Image::new(dims, data)?,
        labels: LabelMap::new(dims, labels)?,
        k: 2,
        moving: None,
        shift: None,
    })
}

struct Wave {
    freq: [f64; 3],
    phase: f64,
    amp: f64,
}

fn texture(waves: &[Wave], total: f64, p: [f64; 3]) -> f64 {
    let mut v = 0.0;
    for w in waves {
        v += w.amp * (w.freq[0] * p[0] + w.freq[1] * p[1] + w.freq[2] * p[2] + w.phase).sin();
    }
    0.5 + 0.3 * v / total
}

fn shifted_pair(grid: &Grid, rng: &mut ChaCha8Rng, noise: f64, shift: &[i64]) -> Result<Phantom> {
    let d = grid.ndim();
    let dims = grid.dims();
    let waves: Vec<Wave> = (0..10)
        .map(|_| {
            // Wavelengths between 6 and 16 voxels in a random direction.
            let wavelength = 6.0 + 10.0 * rng.random::<f64>();
            let mut dir = [0.0; 3];
            for a in 0..d {
                dir[a] = gaussian(rng);
            }
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let k = 2.0 * core::f64::consts::PI / wavelength;
            Wave {
                freq: [k * dir[0] / len, k * dir[1] / len, k * dir[2] / len],
                phase: 2.0 * core::f64::consts::PI * rng.random::<f64>(),
                amp: 0.5 + rng.random::<f64>(),
            }
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.amp).sum();
    let mut s = [0.0; 3];
    for a in 0..d {
        s[a] = shift[a] as f64;
    }
    let n = grid.len();
    let mut fixed = Vec::with_capacity(n);
    let mut moving = Vec::with_capacity(n);
    for x in 0..n {
        let c = coords_f(grid, x);
        fixed.push(texture(&waves, total, c));
        moving.push(texture(&waves, total, [c[0] - s[0], c[1] - s[1], c[2] - s[2]]));
    }
    // A sum of random sinusoids has little contrast, so the fixed field's
    // range is stretched to [0.1, 0.9] and the same map is applied to both.
    let lo = fixed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fixed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let stretch = |v: &mut f64| *v = (0.1 + 0.8 * (*v - lo) / (hi - lo)).clamp(0.0, 1.0);
        fixed.iter_mut().for_each(stretch);
        moving.iter_mut().for_each(stretch);
    }
    let quantize = |v: f64| -> u16 {
        // Thresholds split [0.2, 0.8] into equal thirds.
        let t = ((v - 0.2) / 0.6 * PAIR_LABELS as f64).floor();
        t.clamp(0.0, (PAIR_LABELS - 1) as f64) as u16
    };
    let fixed_labels: Vec<u16> = fixed.iter().map(|&v| quantize(v)).collect();
    let moving_labels: Vec<u16> = moving.iter().map(|&v| quantize(v)).collect();
    add_noise(&mut fixed, noise, rng);
    add_noise(&mut moving, noise, rng);
    Ok(Phantom {
        kind: PhantomKind::ShiftedPair,
        seed: 0,
        image: Image::new(dims, fixed)?,
        labels: LabelMap::new(dims, fixed_labels)?,
        k: PAIR_LABELS,
        moving: Some((Image::new(dims, moving)?, LabelMap::new(dims, moving_labels)?)),
        shift: Some(shift.to_vec()),
    })
}
