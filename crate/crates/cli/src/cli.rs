//! Argument definitions and command implementations for the `prism` binary.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use prism_core::attention::{
    block_sparse_attention, dense_attention, evaluate_against, flop_count, AttentionInputs,
    DenseReference, EvalReport, FlopCount,
};
use prism_core::estimator::{estimate, BandMode, BlockMask, EstimatorConfig};
use prism_core::numerics::prsm::{read_matrix, write_matrix, Tensor};
use prism_core::rope::{PairLayout, RopeConfig};
use prism_core::spectral::{build_profile, ZoneThresholds};
use prism_core::synth::{generate, Pattern, WorkloadSpec};
use serde::Serialize;

use crate::experiments::{ablation_sweep, bench, block_size_sweep, loglog_slope, P_GRID};

pub const SCHEMA_VERSION: u32 = 1;

/// Invalid flag combinations that clap cannot catch; reported with exit
/// code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

#[derive(Debug, Parser)]
#[command(
    name = "prism",
    version,
    about = "Spectral-aware block importance estimation for block-sparse attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export per-pair attenuation and zones as CSV.
    Spectrum(SpectrumArgs),
    /// Generate a synthetic q/k/v workload.
    Synth(SynthArgs),
    /// Estimate a block mask from q and k.
    Estimate(EstimateArgs),
    /// Evaluate a block mask against dense attention.
    Eval(EvalArgs),
    /// Density/recall sweeps over band modes or block sizes.
    Sweep(SweepArgs),
    /// Time mask estimation against sequence length.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LayoutArg {
    Interleaved,
    HalfSplit,
}

impl From<LayoutArg> for PairLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Interleaved => PairLayout::Interleaved,
            LayoutArg::HalfSplit => PairLayout::HalfSplit,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PatternArg {
    Slash,
    Vertical,
    Block,
    Mixed,
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Slash => Pattern::Slash,
            PatternArg::Vertical => Pattern::Vertical,
            PatternArg::Block => Pattern::Block,
            PatternArg::Mixed => Pattern::Mixed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BandModeArg {
    Dual,
    High,
    Low,
    Full,
}

impl From<BandModeArg> for BandMode {
    fn from(b: BandModeArg) -> Self {
        match b {
            BandModeArg::Dual => BandMode::Dual,
            BandModeArg::High => BandMode::HighOnly,
            BandModeArg::Low => BandMode::LowOnly,
            BandModeArg::Full => BandMode::FullSpectrum,
        }
    }
}

#[derive(Debug, Args)]
pub struct RopeArgs {
    #[arg(long, default_value_t = 1e6)]
    pub base: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Interleaved)]
    pub layout: LayoutArg,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub rope: RopeArgs,
    #[arg(long, default_value_t = 128)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub block_size: u64,
    #[arg(long, default_value_t = 0.1)]
    pub dead_threshold: f64,
    #[arg(long, default_value_t = 0.9)]
    pub semantic_threshold: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    #[arg(long, value_enum, default_value_t = PatternArg::Mixed)]
    pub pattern: PatternArg,
    #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
    pub length: u64,
    #[arg(long = "dim", default_value_t = 128)]
    pub head_dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Tokens over which pre-rotation content is held constant.
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub stationarity: u64,
    #[command(flatten)]
    pub rope: RopeArgs,
}

impl WorkloadArgs {
    pub fn spec(&self) -> Result<WorkloadSpec> {
        let mut spec = WorkloadSpec::new(self.pattern.into(), self.length as usize, self.seed);
        spec.head_dim = self.head_dim;
        spec.base = self.rope.base;
        spec.layout = self.rope.layout.into();
        spec.stationarity = self.stationarity as usize;
        if let Err(e) = spec.validate() {
            return usage(e.to_string());
        }
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Writes `<prefix>.q.prsm`, `.k.prsm`, `.v.prsm` and `.json`.
    #[arg(long, default_value = "workload")]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimatorArgs {
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub block_size: u64,
    #[arg(long, default_value_t = 64)]
    pub d_high: usize,
    #[arg(long, default_value_t = 96)]
    pub d_low: usize,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[arg(long)]
    pub no_calibration: bool,
    #[arg(long, value_enum, default_value_t = BandModeArg::Dual)]
    pub band_mode: BandModeArg,
    /// Keep the raw top-p selection without adding the diagonal blocks.
    #[arg(long)]
    pub no_force_diagonal: bool,
}

impl EstimatorArgs {
    pub fn config(&self, head_dim: usize) -> Result<EstimatorConfig> {
        let cfg = EstimatorConfig {
            block_size: self.block_size as usize,
            d_high: self.d_high,
            d_low: self.d_low,
            top_p: self.top_p,
            calibration: !self.no_calibration,
            band_mode: self.band_mode.into(),
            force_diagonal: !self.no_force_diagonal,
        };
        if let Err(e) = cfg.validate(head_dim) {
            return usage(e.to_string());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub q: PathBuf,
    #[arg(long)]
    pub k: PathBuf,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub rope: RopeArgs,
    /// Mask as a u8 PRSM1 tensor.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the selected blocks as `u,v` CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub q: PathBuf,
    #[arg(long)]
    pub k: PathBuf,
    #[arg(long)]
    pub v: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    pub block_size: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepKind {
    /// Band mode × calibration over the p grid.
    Ablation,
    /// Block sizes over the p grid.
    BlockSize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::Ablation)]
    pub kind: SweepKind,
    #[command(flatten)]
    pub workload: WorkloadArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, value_delimiter = ',')]
    pub p_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256])]
    pub block_sizes: Vec<usize>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 2048, 4096, 8192])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub repeats: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes `text` and a newline to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_rows<S: Serialize>(out: Box<dyn Write>, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Spectrum(a) => spectrum(&a),
        Command::Synth(a) => synth(&a),
        Command::Estimate(a) => estimate_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Bench(a) => bench_cmd(&a),
    }
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let rope = RopeConfig::new(a.rope.base, a.head_dim, a.rope.layout.into())
        .map_err(|e| UsageError(e.to_string()))?;
    let thresholds = ZoneThresholds {
        dead: a.dead_threshold,
        semantic: a.semantic_threshold,
    };
    let profile = build_profile(&rope, a.block_size as usize, thresholds)
        .map_err(|e| UsageError(e.to_string()))?;
    match profile.cutoff_dim {
        Some(c) => eprintln!("cutoff_dim {c:.4}"),
        None => eprintln!("cutoff_dim none"),
    }
    let mut out = open_out(a.out.as_deref())?;
    profile.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SynthSidecar<'a> {
    schema_version: u32,
    spec: &'a WorkloadSpec,
    files: [String; 3],
    dtype: &'static str,
    shape: [usize; 2],
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = a.workload.spec()?;
    let w = generate(&spec)?;
    let names = ["q", "k", "v"].map(|n| prefixed(&a.out_prefix, &format!(".{n}.prsm")));
    for (path, m) in names.iter().zip([&w.q, &w.k, &w.v]) {
        write_matrix(path, m).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let sidecar = SynthSidecar {
        schema_version: SCHEMA_VERSION,
        spec: &spec,
        files: names.clone().map(|p| {
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        }),
        dtype: "f64",
        shape: [spec.length, spec.head_dim],
    };
    let json_path = prefixed(&a.out_prefix, ".json");
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    std::fs::write(&json_path, json)
        .with_context(|| format!("cannot write {}", json_path.display()))?;
    eprintln!(
        "wrote {} {}x{} workload to {}.{{q,k,v}}.prsm",
        spec.pattern.as_str(),
        spec.length,
        spec.head_dim,
        a.out_prefix.display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<prism_core::Matrix> {
    read_matrix(path).with_context(|| format!("cannot read {}", path.display()))
}

#[derive(Serialize)]
struct BranchSummary {
    band: &'static str,
    width: usize,
    tau: f64,
    density: f64,
}

#[derive(Serialize)]
struct EstimateSummary {
    schema_version: u32,
    config: EstimatorConfig,
    block_count: usize,
    selected_blocks: usize,
    density: f64,
    branches: Vec<BranchSummary>,
}

fn estimate_cmd(a: &EstimateArgs) -> Result<()> {
    let q = load(&a.q)?;
    let k = load(&a.k)?;
    if q.shape() != k.shape() {
        anyhow::bail!("q {:?} and k {:?} shapes differ", q.shape(), k.shape());
    }
    let cfg = a.estimator.config(q.cols())?;
    let rope = RopeConfig::new(a.rope.base, q.cols(), a.rope.layout.into())
        .map_err(|e| UsageError(e.to_string()))?;
    let est = estimate(&q, &k, &cfg, &rope)?;
    Tensor::from_bool_matrix(est.mask.bits())
        .write(&a.out)
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    if let Some(path) = &a.csv {
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        est.mask.write_csv(BufWriter::new(f))?;
    }
    let summary = EstimateSummary {
        schema_version: SCHEMA_VERSION,
        config: cfg,
        block_count: est.mask.block_count(),
        selected_blocks: est.mask.selected_count(),
        density: est.mask.density(),
        branches: est
            .branches
            .iter()
            .map(|b| BranchSummary {
                band: match b.band.kind {
                    prism_core::rope::BandKind::High => "high",
                    prism_core::rope::BandKind::Low => "low",
                    prism_core::rope::BandKind::Full => "full",
                },
                width: b.band.width,
                tau: b.tau,
                density: b.mask.density(),
            })
            .collect(),
    };
    eprintln!(
        "density {:?} ({} of {} causal blocks)",
        summary.density,
        summary.selected_blocks,
        est.mask.causal_block_count()
    );
    emit(&serde_json::to_string(&summary)?)?;
    Ok(())
}

#[derive(Serialize)]
struct EvalConfig {
    q: String,
    k: String,
    v: String,
    mask: String,
    block_size: usize,
    length: usize,
    head_dim: usize,
}

#[derive(Serialize)]
struct Timing {
    dense_seconds: f64,
    sparse_seconds: f64,
}

#[derive(Serialize)]
struct Versions {
    prism: &'static str,
}

/// Output of `prism eval`.
#[derive(Serialize)]
struct RunReport {
    schema_version: u32,
    config: EvalConfig,
    eval: EvalReport,
    flops: FlopCount,
    timing: Timing,
    versions: Versions,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let inputs = AttentionInputs::new(load(&a.q)?, load(&a.k)?, load(&a.v)?)?;
    let bits = Tensor::read(&a.mask)
        .and_then(|t| t.to_bool_matrix())
        .with_context(|| format!("cannot read mask {}", a.mask.display()))?;
    let mask = BlockMask::from_bits(bits)?;
    let block_size = a.block_size as usize;

    let start = Instant::now();
    let _ = dense_attention(&inputs);
    let dense_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let _ = block_sparse_attention(&inputs, &mask, block_size)?;
    let sparse_seconds = start.elapsed().as_secs_f64();

    let reference = DenseReference::compute(&inputs, block_size)?;
    let report = evaluate_against(&mask, &inputs, &reference)?;
    let flops = flop_count(&mask, inputs.len(), inputs.head_dim(), block_size)?;
    eprintln!(
        "density {:?} recall {:?}",
        report.density, report.recall_mass
    );
    let run = RunReport {
        schema_version: SCHEMA_VERSION,
        config: EvalConfig {
            q: a.q.display().to_string(),
            k: a.k.display().to_string(),
            v: a.v.display().to_string(),
            mask: a.mask.display().to_string(),
            block_size,
            length: inputs.len(),
            head_dim: inputs.head_dim(),
        },
        eval: report,
        flops,
        timing: Timing {
            dense_seconds,
            sparse_seconds,
        },
        versions: Versions {
            prism: env!("CARGO_PKG_VERSION"),
        },
    };
    emit(&serde_json::to_string_pretty(&run)?)?;
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let spec = a.workload.spec()?;
    let cfg = a.estimator.config(spec.head_dim)?;
    let p_grid = a.p_grid.clone().unwrap_or_else(|| P_GRID.to_vec());
    if p_grid.is_empty() || p_grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return usage("p grid values must be in (0, 1]");
    }
    let inputs = generate(&spec)?;
    let rope = spec.rope()?;
    let out = open_out(a.out.as_deref())?;
    match a.kind {
        SweepKind::Ablation => write_rows(out, &ablation_sweep(&inputs, &rope, &cfg, &p_grid)?),
        SweepKind::BlockSize => {
            if a.block_sizes.contains(&0) {
                return usage("block sizes must be at least 1");
            }
            write_rows(
                out,
                &block_size_sweep(&inputs, &rope, &cfg, &a.block_sizes, &p_grid)?,
            )
        }
    }
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    if a.lengths.is_empty() || a.lengths.contains(&0) {
        return usage("lengths must be positive");
    }
    let cfg = a.estimator.config(128)?;
    let rows = bench(&a.lengths, a.repeats as usize, &cfg, a.seed)?;
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.estimate_seconds).collect();
        eprintln!("log-log slope {:.3}", loglog_slope(&xs, &ys));
    }
    for r in &rows {
        eprintln!(
            "L={} density {:.4} flop ratio {:.3} (1/density {:.3})",
            r.length,
            r.density,
            r.flop_ratio,
            1.0 / r.density
        );
    }
    write_rows(open_out(a.out.as_deref())?, &rows)
}
