//! `wien sweep`: one encode per (mode, budget, seed) row, written as CSV in
//! grid order with a median row per (mode, budget).

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use wien_core::dataio::{generate, SyntheticKind, SyntheticSpec};
use wien_core::{decode, Mode, NdTensor};

use crate::{score, usage, Budget, CodecArgs, RawArgs};

pub const CSV_HEADER: &str = "mode,budget,ratio,psnr,ssim,r,encode_seconds,seed,error";

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Tensor to encode; without it a synthetic fixture is generated.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "speckle")]
    kind: SyntheticKind,
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    fixture_shape: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    fixture_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "plain,wavelet-inr,wien-inr")]
    modes: Vec<Mode>,
    /// Parameter counts or ratios below 1.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<Budget>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// CSV destination (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    raw: RawArgs,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub mode: Mode,
    pub budget: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Scores, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub ratio: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub r: Option<f64>,
    pub encode_seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    fn csv(&self) -> String {
        match &self.outcome {
            Ok(s) => format!(
                "{},{},{},{},{},{},{},{},",
                self.mode,
                self.budget,
                s.ratio,
                s.psnr,
                opt(s.ssim),
                opt(s.r),
                s.encode_seconds,
                self.seed
            ),
            Err(tag) => format!("{},{},,,,,,{},{}", self.mode, self.budget, self.seed, tag),
        }
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median row over the successful rows of one (mode, budget) cell.
fn median_csv(mode: Mode, budget: usize, rows: &[&Row]) -> String {
    let ok: Vec<&Scores> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let col = |f: &dyn Fn(&Scores) -> Option<f64>| opt(median(ok.iter().filter_map(|s| f(s)).collect()));
    let failed = rows.len() - ok.len();
    format!(
        "{mode},{budget},{},{},{},{},{},median,{}",
        col(&|s| Some(s.ratio)),
        col(&|s| Some(s.psnr)),
        col(&|s| s.ssim),
        col(&|s| s.r),
        col(&|s| Some(s.encode_seconds)),
        if failed > 0 { format!("{failed} failed") } else { String::new() }
    )
}

/// Stable short tag naming the failing stage and error kind.
fn error_tag(e: &wien_core::Error) -> String {
    let root = e.root();
    let kind = format!("{root:?}");
    let kind = kind.split(['(', ' ', '{']).next().unwrap_or("error").to_string();
    match e {
        wien_core::Error::Stage { stage, .. } => format!("{}:{kind}", stage.replace(' ', "-")),
        _ => kind,
    }
}

fn run_row(t: &NdTensor, codec: &CodecArgs, mode: Mode, budget: usize, seed: u64, threads: usize) -> Row {
    let mut cfg = codec.config(mode, budget, seed);
    cfg.threads = threads;
    let outcome = wien_core::encode(t, &cfg)
        .and_then(|out| {
            let rec = decode(&out.model)?;
            Ok((out, rec))
        })
        .map_err(|e| error_tag(&e))
        .and_then(|(out, rec)| {
            score(t, &rec, None, codec.wavelet, codec.levels, out.report.file_bytes, out.report.encode_seconds)
                .map(|m| Scores {
                    ratio: m.compression_ratio,
                    psnr: m.psnr_db,
                    ssim: m.ssim,
                    r: m.pearson_r,
                    encode_seconds: m.encode_seconds,
                })
                .map_err(|e| format!("metrics:{e}"))
        });
    Row {
        mode,
        budget,
        seed,
        outcome,
    }
}

/// Runs the grid in spec order; with several threads rows run concurrently
/// (each single-threaded) and are still emitted in spec order.
pub fn run_grid(t: &NdTensor, codec: &CodecArgs, modes: &[Mode], budgets: &[usize], seeds: &[u64]) -> Result<Vec<Row>> {
    let jobs: Vec<(Mode, usize, u64)> = modes
        .iter()
        .flat_map(|&m| budgets.iter().flat_map(move |&b| seeds.iter().map(move |&s| (m, b, s))))
        .collect();
    if codec.threads <= 1 {
        return Ok(jobs.iter().map(|&(m, b, s)| run_row(t, codec, m, b, s, 1)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(codec.threads).build()?;
    Ok(pool.install(|| jobs.par_iter().map(|&(m, b, s)| run_row(t, codec, m, b, s, 1)).collect()))
}

pub fn to_csv(rows: &[Row], modes: &[Mode], budgets: &[usize]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    for &m in modes {
        for &b in budgets {
            let cell: Vec<&Row> = rows.iter().filter(|r| r.mode == m && r.budget == b).collect();
            out.push_str(&median_csv(m, b, &cell));
            out.push('\n');
        }
    }
    out
}

pub fn run(a: &SweepArgs) -> Result<()> {
    if a.budgets.is_empty() {
        return Err(usage("--budgets needs at least one value"));
    }
    if a.modes.is_empty() || a.seeds.is_empty() {
        return Err(usage("--modes and --seeds need at least one value"));
    }
    let t = match &a.input {
        Some(p) => a.raw.read(p)?,
        None => generate(&SyntheticSpec {
            kind: a.kind.clone(),
            shape: a.fixture_shape.clone(),
            seed: a.fixture_seed,
        })?,
    };
    let budgets = a.budgets.iter().map(|b| b.params(&t)).collect::<Result<Vec<usize>>>()?;
    let rows = run_grid(&t, &a.codec, &a.modes, &budgets, &a.seeds)?;
    let csv = to_csv(&rows, &a.modes, &budgets);
    match &a.output {
        Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: Mode, budget: usize, seed: u64, psnr: Option<f64>) -> Row {
        Row {
            mode,
            budget,
            seed,
            outcome: psnr
                .map(|p| Scores {
                    ratio: 0.5,
                    psnr: p,
                    ssim: None,
                    r: Some(0.9),
                    encode_seconds: 1.0,
                })
                .ok_or_else(|| "train:Divergence".to_string()),
        }
    }

    #[test]
    fn medians_and_row_counts() {
        let modes = [Mode::Plain, Mode::WienInr];
        let budgets = [100, 200];
        let mut rows = Vec::new();
        for m in modes {
            for b in budgets {
                for s in 0..3 {
                    rows.push(row(m, b, s, Some(20.0 + s as f64)));
                }
            }
        }
        rows[1].outcome = Err("train:Divergence".into());
        let csv = to_csv(&rows, &modes, &budgets);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 12 + 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[2], "plain,100,,,,,,1,train:Divergence");
        // seeds 0 and 2 survive: median of 20 and 22
        assert_eq!(lines[13], "plain,100,0.5,21,,0.9,1,median,1 failed");
        assert_eq!(lines[16], "wien-inr,200,0.5,21,,0.9,1,median,");
        assert!(lines.iter().all(|l| l.split(',').count() == 9));
    }

    #[test]
    fn median_of_nothing_is_empty() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
    }

    #[test]
    fn tags_name_stage_and_kind() {
        let e = wien_core::Error::Stage {
            stage: "train",
            source: Box::new(wien_core::Error::Divergence { step: 2, loss: 1.0 }),
        };
        assert_eq!(error_tag(&e), "train:Divergence");
        assert_eq!(error_tag(&wien_core::Error::InvalidConfig("x".into())), "InvalidConfig");
    }
}
