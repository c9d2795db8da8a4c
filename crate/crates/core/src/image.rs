//! Voxel grids: intensity images, label maps and per-voxel probability rows.
//!
//! All containers use one flat indexing convention: row-major with x
//! fastest, so voxel `(x, y, z)` lives at `x + nx * (y + ny * z)`.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Label value marking a voxel without a label.
pub const UNLABELED: u16 = u16::MAX;

/// Strides and coordinate conversion for a 2D or 3D lattice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::InvalidParam("images must be 2D or 3D".to_string()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParam("image extents must be positive".to_string()));
        }
        let mut strides = Vec::with_capacity(dims.len());
        let mut s = 1;
        for &d in dims {
            strides.push(s);
            s *= d;
        }
        Ok(Self { dims: dims.to_vec(), strides })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rem = index;
        for (axis, &d) in self.dims.iter().enumerate() {
            c[axis] = rem % d;
            rem /= d;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Flat index of `coords + offset`, clamped into the grid.
    pub fn clamped_offset(&self, coords: &[usize; 3], offset: &[i64]) -> usize {
        let mut idx = 0;
        for axis in 0..self.ndim() {
            let max = self.dims[axis] as i64 - 1;
            let c = (coords[axis] as i64 + offset[axis]).clamp(0, max);
            idx += c as usize * self.strides[axis];
        }
        idx
    }
}

/// Scalar intensity image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Vec<usize>,
    spacing: Vec<f64>,
    data: Vec<f64>,
    intensity_range: (f64, f64),
}

impl Image {
    /// Wraps intensities that are already normalized to `[0, 1]`.
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(dims)?;
        check_len(grid.len(), data.len())?;
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidParam(
                "normalized intensities must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Self {
            spacing: vec![1.0; dims.len()],
            dims: dims.to_vec(),
            data,
            intensity_range: (0.0, 1.0),
        })
    }

    /// Min-max normalizes raw intensities, remembering the original range.
    pub fn from_raw(dims: &[usize], raw: &[f64]) -> Result<Self> {
        let grid = Grid::new(dims)?;
        check_len(grid.len(), raw.len())?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("intensities must be finite".to_string()));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let data = if span > 0.0 {
            raw.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Ok(Self {
            spacing: vec![1.0; dims.len()],
            dims: dims.to_vec(),
            data,
            intensity_range: (lo, hi),
        })
    }

    /// Scales integer samples by `max_value`, as for 8/16-bit grayscale.
    pub fn from_scaled(dims: &[usize], samples: &[u16], max_value: u16) -> Result<Self> {
        if max_value == 0 {
            return Err(Error::InvalidParam("max value must be positive".to_string()));
        }
        let scale = f64::from(max_value);
        let data = samples.iter().map(|&s| (f64::from(s) / scale).min(1.0)).collect();
        let mut image = Self::new(dims, data)?;
        image.intensity_range = (0.0, scale);
        Ok(image)
    }

    pub fn with_spacing(mut self, spacing: &[f64]) -> Result<Self> {
        if spacing.len() != self.dims.len() || spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParam("spacing must be positive per axis".to_string()));
        }
        self.spacing = spacing.to_vec();
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn intensity_range(&self) -> (f64, f64) {
        self.intensity_range
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grid(&self) -> Grid {
        Grid::new(&self.dims).expect("image dims are validated at construction")
    }

    /// SHA-256 over the dims and the normalized intensities.
    ///
    /// Packs carry this hash so that eigenpairs are never applied to a
    /// different image.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update([self.dims.len() as u8]);
        for &d in &self.dims {
            hasher.update((d as u64).to_le_bytes());
        }
        for &v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }
}

/// Hard label per voxel, or [`UNLABELED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Vec<usize>,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(dims: &[usize], labels: Vec<u16>) -> Result<Self> {
        let grid = Grid::new(dims)?;
        check_len(grid.len(), labels.len())?;
        Ok(Self { dims: dims.to_vec(), labels })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks every value is either below `k` or unlabeled.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l != UNLABELED && usize::from(l) >= k) {
            Some(l) => Err(Error::InvalidParam(alloc::format!("label {l} is not below K = {k}"))),
            None => Ok(()),
        }
    }
}

/// `N x K` row-stochastic matrix of label probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    dims: Vec<usize>,
    k: usize,
    values: Vec<f64>,
}

impl ProbabilityField {
    /// Row-sum tolerance for a valid field.
    pub const ROW_TOL: f64 = 1e-6;

    pub fn new(dims: &[usize], k: usize, values: Vec<f64>) -> Result<Self> {
        let grid = Grid::new(dims)?;
        if k == 0 {
            return Err(Error::InvalidParam("K must be positive".to_string()));
        }
        check_len(grid.len() * k, values.len())?;
        let field = Self { dims: dims.to_vec(), k, values };
        field.validate()?;
        Ok(field)
    }

    pub fn uniform(dims: &[usize], k: usize) -> Result<Self> {
        let n: usize = Grid::new(dims)?.len();
        Self::new(dims, k, vec![1.0 / k as f64; n * k])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.values.chunks(self.k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > Self::ROW_TOL
                || row.iter().any(|v| !v.is_finite() || *v < -Self::ROW_TOL || *v > 1.0 + Self::ROW_TOL)
            {
                return Err(Error::InvalidParam(alloc::format!(
                    "row {i} is not a probability vector"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    /// Column `k` as a dense vector.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().skip(k).step_by(self.k).copied().collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frobenius norm of the difference.
    pub fn frobenius_diff(&self, other: &Self) -> f64 {
        #[allow(unused_imports)] // float math lives in `core` only on recent toolchains
        use num_traits::Float;
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Values clamped to `[0, 1]`, for export.
    pub fn clamped_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }
}

/// Per-voxel argmax of `U`; ties go to the lowest label index.
pub fn hard_labels(field: &ProbabilityField) -> LabelMap {
    let labels = field
        .values
        .chunks(field.k)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelMap { dims: field.dims.clone(), labels }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimsMismatch { expected: vec![expected], found: vec![found] });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_and_ties() {
        let f = ProbabilityField::new(&[3, 1], 2, vec![1.0, 0.0, 0.0, 1.0, 0.4, 0.6]).unwrap();
        assert_eq!(hard_labels(&f).labels(), &[0, 1, 1]);
        let f = ProbabilityField::new(&[1, 1], 2, vec![0.2, 0.8]).unwrap();
        assert_eq!(hard_labels(&f).labels(), &[1]);
        let f = ProbabilityField::new(&[1, 1], 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(hard_labels(&f).labels(), &[0]);
    }

    #[test]
    fn byte_scaling() {
        let img = Image::from_scaled(&[2, 2], &[0, 255, 255, 0], 255).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn raw_is_min_max_normalized() {
        let img = Image::from_raw(&[3, 1], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(img.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(img.intensity_range(), (2.0, 6.0));
        // Already-normalized data passes through bit-exactly.
        let again = Image::from_raw(&[3, 1], img.data()).unwrap();
        assert_eq!(again.data(), img.data());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Image::new(&[2, 2], vec![0.0; 3]), Err(Error::DimsMismatch { .. })));
        assert!(Image::from_raw(&[1, 1], &[f64::NAN]).is_err());
        assert!(Grid::new(&[4]).is_err());
        assert!(ProbabilityField::new(&[1, 1], 2, vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn grid_coords_round_trip() {
        let g = Grid::new(&[3, 4, 5]).unwrap();
        for i in 0..g.len() {
            let c = g.coords(i);
            assert_eq!(g.index(&c), i);
        }
        assert_eq!(g.coords(1), [1, 0, 0]);
        assert_eq!(g.coords(3), [0, 1, 0]);
        assert_eq!(g.clamped_offset(&[0, 0, 0], &[-2, 5, 1]), g.index(&[0, 3, 1]));
    }

    #[test]
    fn content_hash_tracks_intensities() {
        let a = Image::new(&[2, 1], vec![0.0, 1.0]).unwrap();
        let b = Image::new(&[2, 1], vec![1.0, 0.0]).unwrap();
        assert_eq!(a.content_hash(), a.clone().content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
