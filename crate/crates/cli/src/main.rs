mod config;
mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wien_core::codec::{budget_for_ratio, decode_scaled, parse_box, read_header, EncodeReport, FORMAT_VERSION};
use wien_core::dataio::{generate, read_tensor, write_npy, write_pgm, write_raw, SyntheticKind, SyntheticSpec};
use wien_core::metrics::{evaluate, MetricsReport};
use wien_core::wavelet::dwt_pyramid;
use wien_core::{
    decode_roi, encode, load_model, save_model, DType, EncodeConfig, Family, Mode, NdTensor, NormMode, NormScope,
};

#[derive(Parser, Debug)]
#[command(name = "wien", version, about = "Wavelet-domain neural tensor codec", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit networks to a tensor and write a model file plus a JSON report.
    Encode(EncodeArgs),
    /// Rasterize a model file.
    Decode(DecodeArgs),
    /// Decode only a box of a model.
    Roi(RoiArgs),
    /// Compare a reconstruction with its reference.
    Metrics(MetricsArgs),
    /// Print a model header without reading the weights.
    Info(InfoArgs),
    /// Encode one tensor over a grid of modes, budgets and seeds into CSV.
    Sweep(sweep::SweepArgs),
    /// Write a synthetic fixture.
    Generate(GenerateArgs),
}

/// Layout of headerless input files; `.npy` files need neither.
#[derive(Args, Debug, Clone)]
pub struct RawArgs {
    /// Shape of a raw input, e.g. 128,128.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    #[arg(long, default_value = "f32")]
    dtype: DType,
}

impl RawArgs {
    fn read(&self, path: &Path) -> Result<NdTensor> {
        let is_npy = path.extension().is_some_and(|e| e == "npy");
        let raw = match (&self.shape, is_npy) {
            (Some(s), false) => Some((s.as_slice(), self.dtype)),
            (None, false) => return Err(usage(format!("--shape is required for raw input {}", path.display()))),
            (_, true) => None,
        };
        Ok(read_tensor(path, raw).with_context(|| format!("reading {}", path.display()))?)
    }
}

/// Rate target: a parameter count, or a compression ratio below 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Params(usize),
    Ratio(f64),
}

impl std::str::FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Ok(n) = s.parse::<usize>() {
            return Ok(Budget::Params(n));
        }
        match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r < 1.0 => Ok(Budget::Ratio(r)),
            _ => Err(format!("`{s}` is neither a parameter count nor a ratio in (0, 1)")),
        }
    }
}

impl Budget {
    pub fn params(self, t: &NdTensor) -> Result<usize> {
        Ok(match self {
            Budget::Params(n) => n,
            Budget::Ratio(r) => budget_for_ratio(r, t.shape(), t.dtype().size_bytes())?,
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct CodecArgs {
    #[arg(long, default_value = "wien-inr")]
    mode: Mode,
    #[arg(long, default_value = "haar")]
    wavelet: Family,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Enhancement window extent n_r (3, 5 or 9).
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value = "minmax")]
    normalize: NormMode,
    /// Normalize each slice along the first axis separately.
    #[arg(long)]
    per_slice: bool,
    #[arg(long)]
    lr: Option<f64>,
    /// Coordinates per training step (default: whole grid up to 65536).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, env = "WIEN_THREADS", default_value_t = 1)]
    threads: usize,
}

impl CodecArgs {
    pub fn config(&self, mode: Mode, budget: usize, seed: u64) -> EncodeConfig {
        let mut cfg = EncodeConfig {
            mode,
            family: self.wavelet,
            levels: if mode == Mode::Plain { 0 } else { self.levels },
            window: self.window,
            budget,
            norm: self.normalize,
            norm_scope: if self.per_slice { NormScope::PerSlice } else { NormScope::Global },
            threads: self.threads,
            ..Default::default()
        };
        cfg.train.max_steps = self.steps;
        cfg.train.seed = seed;
        cfg.train.batch = self.batch;
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
            cfg.train.lr_min = cfg.train.lr_min.min(lr);
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Parameters, or a compression ratio below 1.
    #[arg(long, default_value = "8192")]
    budget: Budget,
    /// Report path (default: the model path with `.report.json` appended).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Config file of key=value lines or a JSON object; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    raw: RawArgs,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    /// `.npy`, or raw little-endian in the model's dtype for other names.
    #[arg(long)]
    output: PathBuf,
    /// Integer upsampling factor per axis.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    /// Also write an 8-bit PGM of the first slice.
    #[arg(long)]
    pgm: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    slice: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RoiArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Half-open index ranges per axis, e.g. 10:42,0:16.
    #[arg(long)]
    roi: String,
    #[arg(long)]
    pgm: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Reference tensor.
    #[arg(long)]
    reference: PathBuf,
    /// Reconstruction to score.
    #[arg(long)]
    input: PathBuf,
    /// Model file; its size sets the compression ratio and its report the
    /// encode time.
    #[arg(long)]
    model: Option<PathBuf>,
    /// PSNR peak (default: the reference's value range).
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long, default_value = "haar")]
    wavelet: Family,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    raw: RawArgs,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "speckle")]
    kind: SyntheticKind,
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Speckle grain width in samples.
    #[arg(long)]
    grain: Option<f64>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "f32")]
    dtype: DType,
    #[arg(long)]
    pgm: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// A mistake in the invocation rather than in the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<wien_core::Error>() {
            use wien_core::Error as E;
            return match e.root() {
                E::Divergence { .. } => 4,
                E::InvalidConfig(_)
                | E::InvalidLevels { .. }
                | E::UnknownFamily(_)
                | E::BudgetTooSmall { .. }
                | E::OutOfBoundsBox(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn write_tensor(t: &NdTensor, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "npy") {
        write_npy(t, path)?;
    } else {
        write_raw(t, path)?;
    }
    Ok(())
}

pub fn report_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn run_encode(a: &EncodeArgs) -> Result<()> {
    let t = a.raw.read(&a.input)?;
    let cfg = a.codec.config(a.codec.mode, a.budget.params(&t)?, a.codec.seed);
    let out = encode(&t, &cfg)?;
    save_model(&out.model, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    let report = a.report.clone().unwrap_or_else(|| report_path(&a.output));
    std::fs::write(&report, serde_json::to_string_pretty(&out.report)?)?;
    let r = &out.report;
    println!(
        "{}: {} params in {} nets, {} bytes (ratio {:.5}), {:.1} s",
        r.mode,
        r.total_params,
        r.nets.len(),
        r.file_bytes,
        r.compression_ratio,
        r.encode_seconds
    );
    Ok(())
}

fn run_decode(a: &DecodeArgs) -> Result<()> {
    if a.scale == 0 {
        return Err(usage("--scale must be at least 1"));
    }
    let m = load_model(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let t = decode_scaled(&m, a.scale)?;
    write_tensor(&t, &a.output)?;
    if let Some(p) = &a.pgm {
        write_pgm(&t, a.slice, p)?;
    }
    println!("decoded {:?} -> {}", t.shape(), a.output.display());
    Ok(())
}

fn run_roi(a: &RoiArgs) -> Result<()> {
    let ranges = parse_box(&a.roi)?;
    let m = load_model(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let t = decode_roi(&m, &ranges)?;
    write_tensor(&t, &a.output)?;
    if let Some(p) = &a.pgm {
        write_pgm(&t, 0, p)?;
    }
    println!("decoded box {} -> {:?}", a.roi, t.shape());
    Ok(())
}

pub fn feasible_levels(shape: &[usize], wanted: usize) -> usize {
    let smallest = shape.iter().copied().min().unwrap_or(1);
    let mut j = 0;
    while j < wanted && (smallest.div_ceil(1 << j)) >= 2 {
        j += 1;
    }
    j.max(1)
}

pub fn score(
    truth: &NdTensor,
    recon: &NdTensor,
    peak: Option<f64>,
    family: Family,
    levels: usize,
    model_bytes: u64,
    encode_seconds: f64,
) -> Result<MetricsReport> {
    let peak = peak.unwrap_or_else(|| {
        let (lo, hi) = truth.min_max();
        if hi > lo {
            hi - lo
        } else {
            1.0
        }
    });
    let j = feasible_levels(truth.shape(), levels);
    let tp = dwt_pyramid(truth, family, j)?;
    let rp = dwt_pyramid(recon, family, j)?;
    Ok(evaluate(truth, recon, peak, model_bytes, &tp, &rp, encode_seconds)?)
}

fn run_metrics(a: &MetricsArgs) -> Result<()> {
    let truth = a.raw.read(&a.reference)?;
    let recon = a.raw.read(&a.input)?;
    let (bytes, seconds) = match &a.model {
        Some(m) => {
            let size = std::fs::metadata(m).with_context(|| format!("reading {}", m.display()))?.len();
            let secs = std::fs::read_to_string(report_path(m))
                .ok()
                .and_then(|s| serde_json::from_str::<EncodeReport>(&s).ok())
                .map_or(0.0, |r| r.encode_seconds);
            (size, secs)
        }
        None => (truth.size_bytes() as u64, 0.0),
    };
    let report = score(&truth, &recon, a.peak, a.wavelet, a.levels, bytes, seconds)?;
    let json = report.to_json()?;
    match &a.output {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct Info<'a> {
    format_version: u16,
    file_bytes: u64,
    header_bytes: u64,
    payload_bytes: u64,
    parameters: usize,
    compression_ratio: f64,
    header: &'a wien_core::codec::ModelHeader,
}

fn run_info(a: &InfoArgs) -> Result<()> {
    let (header, file_bytes) = read_header(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let payload = header.payload_bytes();
    let raw = header.shape.iter().product::<usize>() as u64 * header.dtype.size_bytes() as u64;
    let info = Info {
        format_version: FORMAT_VERSION,
        file_bytes,
        header_bytes: file_bytes.saturating_sub(payload),
        payload_bytes: payload,
        parameters: header.parameter_count(),
        compression_ratio: file_bytes as f64 / raw as f64,
        header: &header,
    };
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

fn run_generate(a: &GenerateArgs) -> Result<()> {
    let mut kind = a.kind.clone();
    if let Some(g) = a.grain {
        match &mut kind {
            SyntheticKind::Speckle { grain, .. } => *grain = g,
            _ => return Err(usage("--grain applies to speckle only")),
        }
    }
    let spec = SyntheticSpec {
        kind,
        shape: a.shape.clone(),
        seed: a.seed,
    };
    let t = generate(&spec)?.with_dtype(a.dtype);
    write_tensor(&t, &a.output)?;
    if let Some(p) = &a.pgm {
        write_pgm(&t, 0, p)?;
    }
    println!("{} {:?} -> {}", spec.kind.name(), t.shape(), a.output.display());
    Ok(())
}

/// Parses the command line, folding in a config file when one is named.
fn parse(args: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    let Some(path) = config::config_path(&args) else {
        return Cli::try_parse_from(args);
    };
    let entries = match config::read_entries(Path::new(&path)) {
        Ok(e) => e,
        Err(e) => {
            return Err(clap::Error::raw(clap::error::ErrorKind::InvalidValue, format!("--config: {e:#}\n")));
        }
    };
    // subcommand first, then the file's flags, then the real ones
    let mut merged: Vec<OsString> = args[..2.min(args.len())].to_vec();
    merged.extend(config::as_flags(&entries));
    merged.extend(args.into_iter().skip(2));
    Cli::try_parse_from(merged)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => run_encode(a),
        Command::Decode(a) => run_decode(a),
        Command::Roi(a) => run_roi(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Info(a) => run_info(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Generate(a) => run_generate(a),
    }
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
