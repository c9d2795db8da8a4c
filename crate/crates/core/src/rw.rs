//! The exact random walker: assemble the non-seeded system and solve it with
//! conjugate gradients. Ground truth for every fast path.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};
use crate::graph::{partition_blocks, Laplacian, LaplacianMode, SeedPartition};
use crate::image::{Grid, Image, ProbabilityField};
use crate::linalg::{cg_default_max_iter, cg_solve, Shifted, CG_TOL};

/// Seeds, optional priors and the prior weight `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelProblem {
    dims: Vec<usize>,
    k: usize,
    seeds: SeedPartition,
    priors: Option<ProbabilityField>,
    gamma: f64,
}

impl LabelProblem {
    pub fn new(
        dims: &[usize],
        k: usize,
        seeds: SeedPartition,
        priors: Option<ProbabilityField>,
        gamma: f64,
    ) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        if k == 0 {
            return Err(Error::InvalidParam("K must be positive".into()));
        }
        if seeds.n() != n {
            return Err(Error::DimsMismatch { expected: dims.to_vec(), found: vec![seeds.n()] });
        }
        if let Some(&bad) = seeds.seed_labels().iter().find(|&&l| l >= k) {
            return Err(Error::InvalidParam(alloc::format!("seed label {bad} >= K = {k}")));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParam(alloc::format!("gamma must be finite and >= 0, got {gamma}")));
        }
        match &priors {
            Some(p) => {
                if p.len() != n || p.k() != k {
                    return Err(Error::DimsMismatch {
                        expected: vec![n, k],
                        found: vec![p.len(), p.k()],
                    });
                }
            }
            None if gamma != 0.0 => {
                return Err(Error::InvalidParam("gamma > 0 needs priors".into()));
            }
            None => {}
        }
        if gamma == 0.0 && seeds.is_empty() {
            return Err(Error::SingularSystem);
        }
        Ok(Self { dims: dims.to_vec(), k, seeds, priors, gamma })
    }

    /// Seeds only, `gamma = 0`.
    pub fn from_seeds(dims: &[usize], k: usize, seeds: &[(usize, usize)]) -> Result<Self> {
        let n = Grid::new(dims)?.len();
        Self::new(dims, k, SeedPartition::new(n, seeds)?, None, 0.0)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.seeds.n()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.n() == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seeds(&self) -> &SeedPartition {
        &self.seeds
    }

    pub fn priors(&self) -> Option<&ProbabilityField> {
        self.priors.as_ref()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same seeds and priors with a different `gamma`.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(&self.dims, self.k, self.seeds.clone(), self.priors.clone(), gamma)
    }

    /// `U_s` as a column-major `S x K` one-hot block.
    pub(crate) fn seed_block(&self) -> Vec<f64> {
        let s = self.seeds.len();
        let mut u = vec![0.0; s * self.k];
        for (i, &l) in self.seeds.seed_labels().iter().enumerate() {
            u[l * s + i] = 1.0;
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasicOptions {
    pub tol: f64,
    /// `None` means `10 N`.
    pub max_iter: Option<usize>,
}

impl Default for BasicOptions {
    fn default() -> Self {
        Self { tol: CG_TOL, max_iter: None }
    }
}

pub fn solve_basic(lap: &Laplacian, prob: &LabelProblem) -> Result<ProbabilityField> {
    solve_basic_with(lap, prob, &BasicOptions::default())
}

/// Solves `(L_n + gamma I) U_n = gamma P_n - B^T U_s` per label.
///
/// In normalized mode the unknowns are `D^{1/2} U` and the priors
/// `D^{1/2} P`; `U` is recovered by `D^{-1/2}` and rows are renormalized.
/// With `gamma = 0` only `K - 1` columns are solved.
pub fn solve_basic_with(lap: &Laplacian, prob: &LabelProblem, opts: &BasicOptions) -> Result<ProbabilityField> {
    let n = lap.len();
    if prob.len() != n {
        return Err(Error::DimsMismatch { expected: vec![n], found: vec![prob.len()] });
    }
    let k = prob.k();
    let seeds = prob.seeds();
    let s = seeds.len();
    let nn = n - s;
    let d_sqrt = match lap.mode() {
        LaplacianMode::Normalized => lap.d_sqrt(),
        LaplacianMode::Unnormalized => None,
    };
    let blocks = partition_blocks(lap, seeds)?;
    let gamma = prob.gamma();

    // The last column follows from the row sums when there is no prior term.
    let solve_k = if gamma == 0.0 { k - 1 } else { k };
    let mut u_s_hat = prob.seed_block();
    if let Some(ds) = d_sqrt {
        for l in 0..k {
            for (i, &x) in seeds.seed_indices().iter().enumerate() {
                u_s_hat[l * s + i] *= ds[x];
            }
        }
    }
    let mut rhs = vec![0.0; nn * solve_k];
    let mut tmp = vec![0.0; nn];
    for l in 0..solve_k {
        let col = &mut rhs[l * nn..(l + 1) * nn];
        if gamma != 0.0 {
            let p = prob.priors().expect("validated: gamma > 0 has priors");
            for (j, &x) in seeds.non_seeded().iter().enumerate() {
                let scale = d_sqrt.map_or(1.0, |ds| ds[x]);
                col[j] = gamma * scale * p.row(x)[l];
            }
        }
        // -B^T u_s, with B^T applied as rows of B transposed.
        tmp.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..s {
            let us = u_s_hat[l * s + i];
            if us == 0.0 {
                continue;
            }
            let (cols, vals) = blocks.b.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                tmp[c] += v * us;
            }
        }
        for (c, t) in col.iter_mut().zip(&tmp) {
            *c -= t;
        }
    }

    let op = Shifted { matrix: &blocks.l_n, shift: gamma };
    let max_iter = opts.max_iter.unwrap_or_else(|| cg_default_max_iter(nn));
    let x = if nn > 0 && solve_k > 0 { cg_solve(&op, &rhs, solve_k, opts.tol, max_iter)? } else { Vec::new() };

    let mut values = vec![0.0; n * k];
    for (i, &v) in seeds.seed_indices().iter().enumerate() {
        values[v * k + seeds.seed_labels()[i]] = 1.0;
    }
    for (j, &v) in seeds.non_seeded().iter().enumerate() {
        let scale = d_sqrt.map_or(1.0, |ds| 1.0 / ds[v]);
        let row = &mut values[v * k..(v + 1) * k];
        for l in 0..solve_k {
            row[l] = x[l * nn + j] * scale;
        }
        if solve_k < k {
            row[k - 1] = 1.0 - row[..k - 1].iter().sum::<f64>();
        }
    }
    let deviation = finish_rows(&mut values, k);
    log::debug!("basic solve: max row-sum deviation before renormalization {deviation:.3e}");
    ProbabilityField::new(prob.dims(), k, values)
}

/// Clamps entries to `[0, 1]` and rescales rows to sum to one. Returns the
/// largest `|row sum - 1|` seen before clamping.
pub(crate) fn finish_rows(values: &mut [f64], k: usize) -> f64 {
    let mut worst = 0.0f64;
    for row in values.chunks_mut(k) {
        let raw: f64 = row.iter().sum();
        worst = worst.max((raw - 1.0).abs());
        row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            row.iter_mut().for_each(|v| *v /= sum);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    worst
}

/// Smallest standard deviation used when fitting seed intensities.
pub const PRIOR_SIGMA_FLOOR: f64 = 0.01;

/// Per-label Gaussian fitted to the seed intensities, evaluated at every
/// voxel and normalized over labels.
pub fn gaussian_seed_priors(image: &Image, seeds: &SeedPartition, k: usize) -> Result<ProbabilityField> {
    if seeds.n() != image.len() {
        return Err(Error::DimsMismatch { expected: image.dims().to_vec(), found: vec![seeds.n()] });
    }
    let data = image.data();
    let mut sum = vec![0.0; k];
    let mut sum2 = vec![0.0; k];
    let mut count = vec![0usize; k];
    for (&x, &l) in seeds.seed_indices().iter().zip(seeds.seed_labels()) {
        if l >= k {
            return Err(Error::InvalidParam(alloc::format!("seed label {l} >= K = {k}")));
        }
        sum[l] += data[x];
        sum2[l] += data[x] * data[x];
        count[l] += 1;
    }
    let mut mean = vec![0.0; k];
    let mut log_sigma = vec![0.0; k];
    let mut inv_var = vec![0.0; k];
    for l in 0..k {
        if count[l] == 0 {
            return Err(Error::InvalidParam(alloc::format!("label {l} has no seeds")));
        }
        let c = count[l] as f64;
        mean[l] = sum[l] / c;
        let var = (sum2[l] / c - mean[l] * mean[l]).max(PRIOR_SIGMA_FLOOR * PRIOR_SIGMA_FLOOR);
        log_sigma[l] = 0.5 * var.ln();
        inv_var[l] = 1.0 / var;
    }
    let mut values = vec![0.0; image.len() * k];
    for (x, row) in values.chunks_mut(k).enumerate() {
        let j = data[x];
        let mut best = f64::NEG_INFINITY;
        for l in 0..k {
            let d = j - mean[l];
            row[l] = -0.5 * d * d * inv_var[l] - log_sigma[l];
            best = best.max(row[l]);
        }
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - best).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    ProbabilityField::new(image.dims(), k, values)
}
