//! Command line front end. [`run`] returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastwalk_core::adaptive::AdaptivePolicy;
use fastwalk_core::aggregate::Coarsening;
use fastwalk_core::fast::{precompute, PackSet, SpectralPack};
use fastwalk_core::registration::{
    register, warp_labels, AggregateBasis, AggregationOptions, Clock, DisplacementGrid, RegisterOptions,
    DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_PATCH_RADIUS,
};
use fastwalk_core::Error as CoreError;
use serde_json::json;

use crate::bench::{run_benchmark, SuiteConfig};
use crate::error::{Error, Result};
use crate::io::{load_image, load_labels, save_displacement, save_labels, save_probabilities};
use crate::pack::{load_pack, save_pack, EXTENSION};
use crate::seeds::load_seeds;
use crate::segment::{BasisSize, Segmenter};

#[derive(Debug, Parser)]
#[command(name = "fastwalk", version, about = "Random walker segmentation and registration from precomputed eigenpairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute eigenpair packs for one or more beta values.
    Precompute(PrecomputeArgs),
    /// Segment an image from seeds using stored packs.
    Segment(SegmentArgs),
    /// Register a moving image to a fixed one.
    Register(RegisterArgs),
    /// Run a benchmark suite and write CSV.
    Bench(BenchArgs),
    /// Serve the session API over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    pub image: PathBuf,
    #[arg(long = "beta", required = true)]
    pub betas: Vec<f64>,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub eig_tol: f64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub image: PathBuf,
    /// Pack files followed by the seeds file.
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// Solve at this beta, refreshing the nearest pack if needed.
    #[arg(long)]
    pub beta_online: Option<f64>,
    #[arg(long, conflicts_with = "m_use")]
    pub adaptive: bool,
    #[arg(long)]
    pub m_use: Option<usize>,
    #[arg(long, default_value_t = fastwalk_core::adaptive::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoarsenArg {
    Naive,
    Delta,
    Direct,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub fixed: PathBuf,
    pub moving: PathBuf,
    /// Pack for the fixed image; without one the exact solver is used.
    pub pack: Option<PathBuf>,
    /// Odd displacement extents per axis, e.g. `7,7`.
    #[arg(long, value_delimiter = ',', default_value = "7,7")]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = DEFAULT_PATCH_RADIUS)]
    pub patch_radius: usize,
    /// Aggregate voxels: similarity tolerance then maximum radius.
    #[arg(long, num_args = 2, value_names = ["TOL", "RADIUS"])]
    pub aggregate: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "delta")]
    pub coarsen: CoarsenArg,
    #[arg(long, conflicts_with = "adaptive")]
    pub m_use: Option<usize>,
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long, default_value_t = fastwalk_core::adaptive::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Labels of the moving image to carry onto the fixed grid.
    #[arg(long)]
    pub moving_labels: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub suite: PathBuf,
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

/// Wall clock for registration timings.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(pub Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Precompute(a) => cmd_precompute(&a),
        Command::Segment(a) => cmd_segment(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

/// `<stem>_b<beta>.rwpk`, with the beta written the shortest exact way.
pub fn pack_file_name(image: &Path, beta: f64) -> String {
    format!("{}_b{}.{}", stem(image), beta, EXTENSION)
}

fn cmd_precompute(a: &PrecomputeArgs) -> Result<()> {
    let image = load_image(&a.image)?;
    create_dir(&a.out_dir)?;
    for &beta in &a.betas {
        let t = Instant::now();
        let pack = match precompute(&image, beta, a.m, a.eig_tol) {
            Ok(p) => p,
            Err(CoreError::EigNotConverged { requested, converged, partial }) if converged > 0 => {
                eprintln!("warning: beta {beta}: only {converged} of {requested} eigenpairs converged; storing those");
                SpectralPack::from_partial(&image, beta, *partial, a.eig_tol)?
            }
            Err(e) => return Err(e.into()),
        };
        let out = a.out_dir.join(pack_file_name(&a.image, beta));
        save_pack(&pack, &out)?;
        log::info!("{}: m={} in {:.1}s", out.display(), pack.basis().m(), t.elapsed().as_secs_f64());
        println!("{}", out.display());
    }
    Ok(())
}

fn cmd_segment(a: &SegmentArgs) -> Result<()> {
    let (seeds_path, pack_paths) = a.inputs.split_last().expect("clap enforces two inputs");
    if !(a.gamma >= 0.0) {
        return Err(Error::Usage(format!("--gamma must be >= 0, got {}", a.gamma)));
    }
    let image = load_image(&a.image)?;
    let packs: Vec<SpectralPack> = pack_paths.iter().map(|p| load_pack(p)).collect::<Result<_>>()?;
    let seeds = load_seeds(seeds_path)?;
    let mut seg = Segmenter::new(image, PackSet::new(packs)?)?;
    if let Some(b) = a.beta_online {
        seg.set_beta(b)?;
    }
    let prob = seg.problem(&seeds, a.k, a.gamma)?;
    let size = match (a.m_use, a.adaptive) {
        (Some(m), _) => BasisSize::Fixed(m),
        (None, true) => BasisSize::Adaptive(AdaptivePolicy::with_epsilon(a.epsilon)),
        (None, false) => BasisSize::All,
    };
    let out = seg.solve(&prob, &size)?;
    create_dir(&a.out_dir)?;
    save_labels(&out.labels, &a.out_dir.join("labels.rawj"))?;
    save_probabilities(&out.field, &a.out_dir.join("probabilities.rawj"))?;
    write_json(&a.out_dir.join("report.json"), &serde_json::to_value(&out.report).expect("report serializes"))?;
    println!("m_use={} online_ms={:.2}", out.report.m_use, out.report.online_ms);
    Ok(())
}

fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let fixed = load_image(&a.fixed)?;
    let moving = load_image(&a.moving)?;
    if a.grid.len() != fixed.dims().len() {
        return Err(Error::Usage(format!(
            "--grid needs {} extents for a {}-d image",
            fixed.dims().len(),
            fixed.dims().len()
        )));
    }
    let grid = DisplacementGrid::new(&a.grid, a.step)?;
    let pack = a.pack.as_deref().map(load_pack).transpose()?;
    let aggregation = match &a.aggregate {
        Some(v) => {
            let (tol, radius) = (v[0], v[1]);
            if radius < 0.0 || radius.fract() != 0.0 {
                return Err(Error::Usage(format!("--aggregate radius must be a whole number, got {radius}")));
            }
            let basis = match a.coarsen {
                CoarsenArg::Naive => AggregateBasis::Coarsen(Coarsening::Naive),
                CoarsenArg::Delta => AggregateBasis::Coarsen(Coarsening::Delta),
                CoarsenArg::Direct => AggregateBasis::Direct,
            };
            Some(AggregationOptions { max_radius: radius as usize, similarity_tol: tol, basis })
        }
        None => None,
    };
    let opts = RegisterOptions {
        beta: a.beta,
        gamma: a.gamma,
        patch_radius: a.patch_radius,
        m_use: a.m_use,
        adaptive: a.adaptive.then(|| AdaptivePolicy::with_epsilon(a.epsilon)),
        aggregation,
        ..RegisterOptions::default()
    };
    let clock = WallClock::default();
    let reg = register(&fixed, &moving, pack.as_ref(), &grid, &opts, &clock)?;
    create_dir(&a.out_dir)?;
    save_displacement(&reg.displacement, &a.out_dir.join("displacement.rawj"))?;
    if let Some(path) = &a.moving_labels {
        let labels = load_labels(path)?;
        let warped = warp_labels(&labels, &reg.displacement)?;
        save_labels(&warped, &a.out_dir.join("warped_labels.rawj"))?;
    }
    let r = &reg.report;
    write_json(
        &a.out_dir.join("report.json"),
        &json!({
            "method": r.method,
            "beta": r.beta,
            "gamma": r.gamma,
            "labels": grid.k(),
            "m_use": r.m_use,
            "n_bar": r.n_bar,
            "adaptive_converged": r.adaptive_converged,
            "priors_ms": r.priors_ms,
            "aggregate_ms": r.aggregate_ms,
            "solve_ms": r.solve_ms,
            "total_ms": r.total_ms,
            "max_displacement": reg.displacement.max_norm(),
        }),
    )?;
    println!("method={} total_ms={:.1}", r.method, r.total_ms);
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&a.suite).map_err(|e| Error::io(&a.suite, e))?;
    let cfg = SuiteConfig::from_json(&text).map_err(|e| Error::format(&a.suite, e.to_string()))?;
    let report = run_benchmark(&cfg)?;
    let file = fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    report.write_csv(file).map_err(|e| Error::format(&a.out, e.to_string()))?;
    println!("{} rows written to {}", report.records.len(), a.out.display());
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| Error::Usage(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    rt.block_on(crate::service::serve(addr)).map_err(|e| Error::io(addr.to_string(), e))
}
