//! Accuracy versus run time on synthetic phantoms.
//!
//! A suite is a JSON file; the report is CSV with one row per solved cell.

use std::io::{Read, Write};
use std::time::Instant;

use fastwalk_core::adaptive::AdaptivePolicy;
use fastwalk_core::fast::{lattice_laplacian, precompute, solve_fast, SpectralPack};
use fastwalk_core::graph::SeedPartition;
use fastwalk_core::image::{hard_labels, LabelMap, ProbabilityField};
use fastwalk_core::metrics::{dice, mean_overlap};
use fastwalk_core::phantom::{make_phantom, Phantom, PhantomKind, PAIR_LABELS};
use fastwalk_core::registration::{
    register, warp_labels, AggregateBasis, AggregationOptions, DisplacementGrid, NoClock, RegisterOptions,
};
use fastwalk_core::aggregate::Coarsening;
use fastwalk_core::rw::{gaussian_seed_priors, solve_basic, LabelProblem};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Basic,
    Fast,
    Adaptive,
    /// Aggregated registration with plain cluster averages.
    Naive,
    /// Aggregated registration with Δ-weighted averages.
    Delta,
    /// Aggregated registration with eigenpairs of the aggregate graph.
    Direct,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::Fast => "fast",
            Self::Adaptive => "adaptive",
            Self::Naive => "naive",
            Self::Delta => "delta",
            Self::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: String,
    pub dims: Vec<usize>,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSuite {
    #[serde(default = "default_grid")]
    pub grid: Vec<usize>,
    #[serde(default = "default_patch")]
    pub patch_radius: usize,
    #[serde(default = "default_agg_tol")]
    pub aggregate_tol: f64,
    #[serde(default = "default_agg_radius")]
    pub aggregate_radius: usize,
    /// Border excluded from endpoint errors.
    #[serde(default = "default_margin")]
    pub margin: usize,
}

fn default_grid() -> Vec<usize> {
    vec![7, 7]
}
fn default_patch() -> usize {
    2
}
fn default_agg_tol() -> f64 {
    0.5
}
fn default_agg_radius() -> usize {
    2
}
fn default_margin() -> usize {
    3
}

impl Default for RegistrationSuite {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            patch_radius: default_patch(),
            aggregate_tol: default_agg_tol(),
            aggregate_radius: default_agg_radius(),
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default = "one")]
    pub master_seed: u64,
    pub phantoms: Vec<PhantomSpec>,
    pub methods: Vec<Method>,
    /// Basis sizes for `fast` (and the aggregated variants).
    #[serde(default)]
    pub m_values: Vec<usize>,
    /// Pack size; defaults to the largest `m_values` entry.
    #[serde(default)]
    pub pack_m: Option<usize>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// Prior weights; registration phantoms default to 1 when this is empty.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds_per_region: usize,
    #[serde(default = "one_usize")]
    pub repetitions: usize,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Record wall times; off makes reports byte-identical across runs.
    #[serde(default = "yes")]
    pub timings: bool,
    #[serde(default)]
    pub registration: Option<RegistrationSuite>,
}

fn one() -> u64 {
    1
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn default_betas() -> Vec<f64> {
    vec![50.0]
}
fn default_seeds() -> usize {
    10
}
fn default_eig_tol() -> f64 {
    1e-6
}
fn default_epsilon() -> f64 {
    0.1
}

impl SuiteConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

pub const CSV_HEADER: &str =
    "phantom,rep,phantom_seed,method,m_use,beta,gamma,n_bar,precompute_ms,online_ms,metric,score,gap,endpoint_error";

/// One solved cell. Empty CSV fields are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub phantom: String,
    pub rep: usize,
    pub phantom_seed: u64,
    pub method: String,
    pub m_use: Option<usize>,
    pub beta: f64,
    pub gamma: f64,
    pub n_bar: Option<usize>,
    pub precompute_ms: Option<f64>,
    pub online_ms: Option<f64>,
    /// `dsc` for segmentation, `mo` for registration.
    pub metric: String,
    pub score: f64,
    /// Frobenius distance to the exact solve of the same problem.
    pub gap: f64,
    pub endpoint_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, w: W) -> std::result::Result<(), csv::Error> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(CSV_HEADER.split(','))?;
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(r: R) -> std::result::Result<Self, csv::Error> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd.deserialize().collect::<std::result::Result<Vec<BenchRecord>, _>>()?;
        Ok(Self { records })
    }
}

/// Independent per-run seed from the master seed and a run counter.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    xxhash_rust::xxh64::xxh64(&counter.to_le_bytes(), master)
}

/// Up to `per_region` seeds drawn uniformly without replacement from each
/// region of `labels`, in label order.
pub fn place_seeds(labels: &LabelMap, k: usize, per_region: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for l in 0..k {
        let region: Vec<usize> =
            labels.labels().iter().enumerate().filter(|(_, &v)| v as usize == l).map(|(i, _)| i).collect();
        let take = per_region.min(region.len());
        let mut picked: Vec<usize> = sample(&mut rng, region.len(), take).into_iter().map(|i| region[i]).collect();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|x| (x, l)));
    }
    out
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn run_benchmark(cfg: &SuiteConfig) -> Result<BenchReport> {
    if cfg.phantoms.is_empty() || cfg.methods.is_empty() {
        return Err(Error::Usage("suite needs at least one phantom and one method".into()));
    }
    let mut report = BenchReport::default();
    let mut counter = 0u64;
    for spec in &cfg.phantoms {
        let kind = PhantomKind::parse(&spec.kind)
            .ok_or_else(|| Error::Usage(format!("unknown phantom kind {:?}", spec.kind)))?;
        for rep in 0..cfg.repetitions {
            let phantom_seed = derive_seed(cfg.master_seed, counter);
            counter += 1;
            let seed_seed = derive_seed(cfg.master_seed, counter);
            counter += 1;
            let phantom = make_phantom(kind, &spec.dims, phantom_seed, spec.noise)?;
            let ctx = Cell { cfg, name: kind.name(), rep, phantom_seed, phantom: &phantom };
            if kind == PhantomKind::ShiftedPair {
                ctx.registration(&mut report)?;
            } else {
                ctx.segmentation(seed_seed, &mut report)?;
            }
        }
    }
    Ok(report)
}

struct Cell<'a> {
    cfg: &'a SuiteConfig,
    name: &'static str,
    rep: usize,
    phantom_seed: u64,
    phantom: &'a Phantom,
}

impl Cell<'_> {
    fn record(&self, method: Method, beta: f64, gamma: f64) -> BenchRecord {
        BenchRecord {
            phantom: self.name.into(),
            rep: self.rep,
            phantom_seed: self.phantom_seed,
            method: method.name().into(),
            m_use: None,
            beta,
            gamma,
            n_bar: None,
            precompute_ms: None,
            online_ms: None,
            metric: String::new(),
            score: 0.0,
            gap: 0.0,
            endpoint_error: None,
        }
    }

    fn time(&self, t: Instant) -> Option<f64> {
        self.cfg.timings.then(|| ms(t))
    }

    fn pack_m(&self) -> usize {
        let n = self.phantom.image.len();
        self.cfg.pack_m.or_else(|| self.cfg.m_values.iter().copied().max()).unwrap_or(n / 8).clamp(1, n)
    }

    fn needs_pack(&self) -> bool {
        self.cfg.methods.iter().any(|m| *m != Method::Basic)
    }

    fn pack(&self, beta: f64) -> Result<(Option<SpectralPack>, Option<f64>)> {
        if !self.needs_pack() {
            return Ok((None, None));
        }
        let t = Instant::now();
        let pack = precompute(&self.phantom.image, beta, self.pack_m(), self.cfg.eig_tol)?;
        Ok((Some(pack), self.time(t)))
    }

    fn segmentation(&self, seed_seed: u64, report: &mut BenchReport) -> Result<()> {
        let ph = self.phantom;
        let k = ph.k;
        let seeds = place_seeds(&ph.labels, k, self.cfg.seeds_per_region, seed_seed);
        let partition = SeedPartition::new(ph.image.len(), &seeds)?;
        let gammas = if self.cfg.gammas.is_empty() { vec![0.0] } else { self.cfg.gammas.clone() };
        for &beta in &self.cfg.betas {
            let (pack, pre_ms) = self.pack(beta)?;
            let lap = lattice_laplacian(&ph.image, beta)?;
            for &gamma in &gammas {
                let priors = if gamma > 0.0 { Some(gaussian_seed_priors(&ph.image, &partition, k)?) } else { None };
                let prob = LabelProblem::new(ph.image.dims(), k, partition.clone(), priors, gamma)?;
                let t = Instant::now();
                let exact = solve_basic(&lap, &prob)?;
                let basic_ms = self.time(t);
                let score = |u: &ProbabilityField| dice(&hard_labels(u), &ph.labels, k).map(|d| d.mean);
                for &method in &self.cfg.methods {
                    let mut runs: Vec<(Option<usize>, ProbabilityField, Option<f64>)> = Vec::new();
                    match method {
                        Method::Basic => runs.push((None, exact.clone(), basic_ms)),
                        Method::Fast => {
                            let pack = pack.as_ref().expect("pack built");
                            let ms_list =
                                if self.cfg.m_values.is_empty() { vec![pack.basis().m()] } else { self.cfg.m_values.clone() };
                            for m in ms_list {
                                let m = m.min(pack.basis().m());
                                let t = Instant::now();
                                let u = solve_fast(pack, &lap, &prob, m)?;
                                runs.push((Some(m), u, self.time(t)));
                            }
                        }
                        Method::Adaptive => {
                            let pack = pack.as_ref().expect("pack built");
                            let policy = AdaptivePolicy::with_epsilon(self.cfg.epsilon);
                            let t = Instant::now();
                            let sel = fastwalk_core::adaptive::select_m(pack, &lap, &prob, &policy)?;
                            let u = solve_fast(pack, &lap, &prob, sel.m_use)?;
                            runs.push((Some(sel.m_use), u, self.time(t)));
                        }
                        _ => continue,
                    }
                    for (m_use, u, online_ms) in runs {
                        let mut rec = self.record(method, beta, gamma);
                        rec.m_use = m_use;
                        rec.online_ms = online_ms;
                        rec.precompute_ms = if method == Method::Basic { None } else { pre_ms };
                        rec.metric = "dsc".into();
                        rec.score = score(&u)?;
                        rec.gap = if method == Method::Basic { 0.0 } else { u.frobenius_diff(&exact) };
                        report.records.push(rec);
                    }
                }
            }
        }
        Ok(())
    }

    fn registration(&self, report: &mut BenchReport) -> Result<()> {
        let ph = self.phantom;
        let reg = self.cfg.registration.clone().unwrap_or_default();
        let grid = DisplacementGrid::new(&reg.grid, 1)?;
        let (moving, moving_labels) = ph.moving.as_ref().expect("shifted pairs carry a moving image");
        let truth = ph.ground_truth_field().expect("shifted pairs carry a shift");
        let gammas = if self.cfg.gammas.is_empty() { vec![1.0] } else { self.cfg.gammas.clone() };
        for &beta in &self.cfg.betas {
            let (pack, pre_ms) = self.pack(beta)?;
            for &gamma in &gammas {
                let base = RegisterOptions { beta, gamma, patch_radius: reg.patch_radius, ..Default::default() };
                let t = Instant::now();
                let exact = register::<SpectralPack>(&ph.image, moving, None, &grid, &base, &NoClock)?;
                let basic_ms = self.time(t);
                for &method in &self.cfg.methods {
                    let ms_list: Vec<Option<usize>> = match method {
                        Method::Basic | Method::Adaptive => vec![None],
                        _ if self.cfg.m_values.is_empty() => vec![None],
                        _ => self.cfg.m_values.iter().map(|&m| Some(m)).collect(),
                    };
                    for m in ms_list {
                        let (result, online_ms) = if method == Method::Basic {
                            (exact.clone(), basic_ms)
                        } else {
                            let mut opts = base.clone();
                            opts.m_use = m;
                            if method == Method::Adaptive {
                                opts.adaptive = Some(AdaptivePolicy::with_epsilon(self.cfg.epsilon));
                            }
                            let basis = match method {
                                Method::Naive => Some(AggregateBasis::Coarsen(Coarsening::Naive)),
                                Method::Delta => Some(AggregateBasis::Coarsen(Coarsening::Delta)),
                                Method::Direct => Some(AggregateBasis::Direct),
                                _ => None,
                            };
                            opts.aggregation = basis.map(|basis| AggregationOptions {
                                max_radius: reg.aggregate_radius,
                                similarity_tol: reg.aggregate_tol,
                                basis,
                            });
                            let t = Instant::now();
                            let r = register(&ph.image, moving, pack.as_ref(), &grid, &opts, &NoClock)?;
                            (r, self.time(t))
                        };
                        let warped = warp_labels(moving_labels, &result.displacement)?;
                        let mut rec = self.record(method, beta, gamma);
                        rec.m_use = result.report.m_use;
                        rec.n_bar = result.report.n_bar;
                        rec.online_ms = online_ms;
                        rec.precompute_ms = if method == Method::Basic { None } else { pre_ms };
                        rec.metric = "mo".into();
                        rec.score = mean_overlap(&warped, &ph.labels, PAIR_LABELS)?;
                        rec.gap = if method == Method::Basic {
                            0.0
                        } else {
                            result.probabilities.frobenius_diff(&exact.probabilities)
                        };
                        rec.endpoint_error = Some(result.displacement.mean_endpoint_error(&truth, reg.margin)?);
                        report.records.push(rec);
                    }
                }
            }
        }
        Ok(())
    }
}
