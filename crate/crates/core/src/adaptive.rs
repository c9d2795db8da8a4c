//! Choosing how many eigenvectors a problem needs before solving it.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math lives in `core` only on recent toolchains
use num_traits::Float;

use crate::error::{Error, Result};
use crate::fast::{visit_columns, SpectralBasis};
use crate::graph::Laplacian;
use crate::linalg::dense::dot;
use crate::rw::LabelProblem;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_STRIDE: usize = 4;

/// Thresholds and the schedule of tested basis sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptivePolicy {
    pub epsilon: f64,
    /// Defaults to `max(K, m / 8)`.
    pub m_start: Option<usize>,
    /// Defaults to `max(1, m / 8)`.
    pub m_step: Option<usize>,
    /// Sub-grid stride used to pick displacement labels.
    pub stride: usize,
    /// Labels whose priors are checked; all labels when `None`.
    pub prior_labels: Option<Vec<usize>>,
}

impl Default for AdaptivePolicy {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, m_start: None, m_step: None, stride: DEFAULT_STRIDE, prior_labels: None }
    }
}

impl AdaptivePolicy {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParam("epsilon must be positive".into()));
        }
        if self.m_step == Some(0) || self.stride == 0 {
            return Err(Error::InvalidParam("m_step and stride must be positive".into()));
        }
        Ok(())
    }

    /// The tested sizes for a pack of `m` columns and `k` labels.
    pub fn schedule(&self, m: usize, k: usize) -> Vec<usize> {
        let start = self.m_start.unwrap_or((m / 8).max(k)).max(1).min(m);
        let step = self.m_step.unwrap_or((m / 8).max(1));
        (0..).map(|i| start + i * step).take_while(|&v| v <= m).collect()
    }
}

/// `min ||A a - u||^2` over `||a|| <= bound`, with `A` column-major `S x m`.
///
/// Works from a one-sided Jacobi SVD of `A`, which keeps small singular
/// values accurate, and evaluates the part of `u` outside the range of `A`
/// as an explicit residual vector. When the unconstrained minimizer is too
/// long, the ridge parameter is bisected until `||a|| = bound`.
pub fn seed_fit(a: &[f64], s: usize, m: usize, u: &[f64], bound: f64) -> f64 {
    assert_eq!(a.len(), s * m);
    assert_eq!(u.len(), s);
    if bound <= 0.0 || s == 0 || m == 0 {
        return dot(u, u);
    }
    let (sig2, dirs) = left_singular(a, s, m);
    let r = sig2.len();
    let coef: Vec<f64> = (0..r).map(|i| dot(&dirs[i * s..(i + 1) * s], u)).collect();
    let mut outside = u.to_vec();
    for _ in 0..2 {
        for i in 0..r {
            let d = &dirs[i * s..(i + 1) * s];
            let c = dot(d, &outside);
            outside.iter_mut().zip(d).for_each(|(o, &v)| *o -= c * v);
        }
    }
    let rest = dot(&outside, &outside);
    let c2: Vec<f64> = coef.iter().map(|c| c * c).collect();
    let norm2 = |mu: f64| -> f64 {
        sig2.iter().zip(&c2).filter(|(&s2, _)| s2 > 0.0).map(|(&s2, &c)| c * s2 / ((s2 + mu) * (s2 + mu))).sum()
    };
    let resid = |mu: f64| -> f64 {
        let fitted: f64 = sig2
            .iter()
            .zip(&c2)
            .map(|(&s2, &c)| if s2 > 0.0 { c * (mu / (s2 + mu)).powi(2) } else { c })
            .sum();
        fitted + rest
    };
    let b2 = bound * bound;
    let free: f64 = sig2.iter().zip(&c2).filter(|(&s2, _)| s2 > 0.0).map(|(&s2, &c)| c / s2).sum();
    if free <= b2 {
        return resid(0.0);
    }
    let top = sig2.iter().cloned().fold(0.0, f64::max);
    let total_c: f64 = c2.iter().sum();
    let (mut lo, mut hi) = (0.0, (top * total_c).sqrt() / bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm2(mid) > b2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    resid(hi)
}

/// Squared singular values and matching unit left singular vectors of the
/// column-major `S x m` matrix, by one-sided Jacobi on whichever of `A` and
/// `A^T` has fewer columns. Directions with a zero singular value are left
/// out when `m <= S`; for `m > S` all `S` directions come back.
fn left_singular(a: &[f64], s: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    if m <= s {
        let mut w = a.to_vec();
        jacobi_columns(&mut w, s, m, None);
        let mut sig2 = Vec::with_capacity(m);
        let mut dirs = Vec::with_capacity(s * m);
        for j in 0..m {
            let col = &w[j * s..(j + 1) * s];
            let n2 = dot(col, col);
            if n2 > 0.0 {
                let inv = 1.0 / n2.sqrt();
                sig2.push(n2);
                dirs.extend(col.iter().map(|v| v * inv));
            }
        }
        (sig2, dirs)
    } else {
        // Columns of A^T are the rows of A.
        let mut w = vec![0.0; m * s];
        for j in 0..m {
            for i in 0..s {
                w[i * m + j] = a[j * s + i];
            }
        }
        let mut v = vec![0.0; s * s];
        (0..s).for_each(|i| v[i * s + i] = 1.0);
        jacobi_columns(&mut w, m, s, Some(&mut v));
        let sig2 = (0..s).map(|i| dot(&w[i * m..(i + 1) * m], &w[i * m..(i + 1) * m])).collect();
        (sig2, v)
    }
}

/// Rotates pairs of the `cols` columns (length `rows`) of `w` until they are
/// mutually orthogonal, applying the same rotations to the square `v`.
fn jacobi_columns(w: &mut [f64], rows: usize, cols: usize, mut v: Option<&mut Vec<f64>>) {
    for _ in 0..64 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (head, tail) = w.split_at_mut(q * rows);
                let wp = &mut head[p * rows..(p + 1) * rows];
                let wq = &mut tail[..rows];
                let alpha = dot(wp, wp);
                let beta = dot(wq, wq);
                let gamma = dot(wp, wq);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                for (x, y) in wp.iter_mut().zip(wq.iter_mut()) {
                    let (a0, b0) = (*x, *y);
                    *x = c * a0 - sn * b0;
                    *y = sn * a0 + c * b0;
                }
                if let Some(v) = v.as_deref_mut() {
                    let n = cols;
                    let (vh, vt) = v.split_at_mut(q * n);
                    let vp = &mut vh[p * n..(p + 1) * n];
                    let vq = &mut vt[..n];
                    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                        let (a0, b0) = (*x, *y);
                        *x = c * a0 - sn * b0;
                        *y = sn * a0 + c * b0;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Residual of a prior column after projecting out a prefix of the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorResidual {
    /// Number of columns projected out so far.
    pub m: usize,
    pub residual: Vec<f64>,
}

impl PriorResidual {
    pub fn new(p: &[f64]) -> Self {
        Self { m: 0, residual: p.to_vec() }
    }

    /// `||p - Q Q^T p||^2` for the columns projected so far.
    pub fn g(&self) -> f64 {
        dot(&self.residual, &self.residual)
    }

    /// Projects out the column-major block holding columns `start..`.
    pub fn project_block(&mut self, start: usize, block: &[f64]) {
        let n = self.residual.len();
        debug_assert_eq!(start, self.m);
        for q in block.chunks_exact(n) {
            let c = dot(q, &self.residual);
            for (r, &qi) in self.residual.iter_mut().zip(q) {
                *r -= c * qi;
            }
            self.m += 1;
        }
    }
}

/// `g = ||p - Q Q^T p||^2` for the first `m` columns of `q` (column-major
/// `N x m`). A cache for a smaller prefix only has the new columns projected
/// out of it.
pub fn prior_residual(q: &[f64], n: usize, m: usize, p: &[f64], cached: Option<PriorResidual>) -> (f64, PriorResidual) {
    let mut r = match cached {
        Some(c) if c.m <= m && c.residual.len() == n => c,
        _ => PriorResidual::new(p),
    };
    let start = r.m;
    r.project_block(start, &q[start * n..m * n]);
    (r.g(), r)
}

/// What [`select_m`] decided and why.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub m_use: usize,
    /// False when no tested size met the thresholds and the whole pack is used.
    pub converged: bool,
    /// `(m, worst f, worst g)` per tested size; `NaN` marks an unused criterion.
    pub trace: Vec<(usize, f64, f64)>,
}

/// The smallest scheduled `m` whose seed fit and prior residual thresholds
/// all pass.
///
/// Seeds are fitted in the normalized coordinates, so the rows of `Q_s` are
/// scaled by `D_s^{-1/2}` and coefficients are bounded by `sqrt(1^T D 1)`.
/// Priors are checked as `D^{1/2} p` against `eps^2 1^T D 1`.
pub fn select_m<B: SpectralBasis + ?Sized>(
    basis: &B,
    lap: &Laplacian,
    prob: &LabelProblem,
    policy: &AdaptivePolicy,
) -> Result<Selection> {
    policy.validate()?;
    let n = basis.n();
    let k = prob.k();
    if lap.len() != n || prob.len() != n {
        return Err(Error::DimsMismatch { expected: vec![n], found: vec![lap.len(), prob.len()] });
    }
    let d_sqrt = lap
        .d_sqrt()
        .ok_or_else(|| Error::InvalidParam("adaptive selection needs the normalized Laplacian".into()))?;
    let volume: f64 = d_sqrt.iter().map(|d| d * d).sum();
    let schedule = policy.schedule(basis.m(), k);
    let eps2 = policy.epsilon * policy.epsilon;
    let m_max = *schedule.last().unwrap_or(&basis.m());

    let seeds = prob.seeds();
    let s = seeds.len();
    let use_seeds = s > 0;
    let use_priors = prob.gamma() > 0.0 && prob.priors().is_some();
    let f_max = s as f64 * eps2;
    let g_max = volume * eps2;
    let bound = volume.sqrt();

    let prior_labels: Vec<usize> = match &policy.prior_labels {
        Some(l) => l.iter().copied().filter(|&l| l < k).collect(),
        None => (0..k).collect(),
    };
    let mut caches: Vec<PriorResidual> = if use_priors {
        let p = prob.priors().expect("checked");
        prior_labels
            .iter()
            .map(|&l| {
                let col: Vec<f64> = (0..n).map(|x| d_sqrt[x] * p.row(x)[l]).collect();
                PriorResidual::new(&col)
            })
            .collect()
    } else {
        Vec::new()
    };
    let targets: Vec<Vec<f64>> = (0..k)
        .map(|l| seeds.seed_labels().iter().map(|&sl| if sl == l { 1.0 } else { 0.0 }).collect())
        .collect();

    // Scaled seed rows for every column up to the largest tested size; prior
    // residuals are advanced lazily per tested size.
    let mut q_s = vec![0.0; s * m_max];
    let mut blocks: Vec<(usize, Vec<f64>)> = Vec::new();
    let keep_blocks = use_priors && basis.resident().is_none();
    visit_columns(basis, m_max, &mut |start, block| {
        for (c, q) in block.chunks_exact(n).enumerate() {
            for (i, &x) in seeds.seed_indices().iter().enumerate() {
                q_s[(start + c) * s + i] = q[x] / d_sqrt[x];
            }
        }
        if keep_blocks {
            blocks.push((start, block.to_vec()));
        }
        Ok(())
    })?;

    let mut trace = Vec::with_capacity(schedule.len());
    for &m in &schedule {
        let f_worst = if use_seeds {
            targets.iter().map(|u| seed_fit(&q_s[..s * m], s, m, u, bound)).fold(0.0, f64::max)
        } else {
            f64::NAN
        };
        let g_worst = if use_priors {
            for cache in caches.iter_mut() {
                advance(basis, &blocks, cache, m, n)?;
            }
            caches.iter().map(|c| c.g()).fold(0.0, f64::max)
        } else {
            f64::NAN
        };
        trace.push((m, f_worst, g_worst));
        let f_ok = !use_seeds || f_worst <= f_max;
        let g_ok = !use_priors || g_worst <= g_max;
        if f_ok && g_ok {
            return Ok(Selection { m_use: m, converged: true, trace });
        }
    }
    log::warn!("adaptive selection found no size under the thresholds; using all {} columns", basis.m());
    Ok(Selection { m_use: basis.m(), converged: false, trace })
}

fn advance<B: SpectralBasis + ?Sized>(
    basis: &B,
    blocks: &[(usize, Vec<f64>)],
    cache: &mut PriorResidual,
    m: usize,
    n: usize,
) -> Result<()> {
    if let Some(q) = basis.resident() {
        let start = cache.m;
        cache.project_block(start, &q[start * n..m * n]);
        return Ok(());
    }
    for (start, block) in blocks {
        let cols = block.len() / n;
        let end = start + cols;
        if end <= cache.m || *start >= m {
            continue;
        }
        let from = cache.m.max(*start);
        let to = end.min(m);
        cache.project_block(from, &block[(from - start) * n..(to - start) * n]);
    }
    Ok(())
}
