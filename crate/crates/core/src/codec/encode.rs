use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::budget::{allocate_params, BudgetPlan, NetRole};
use super::model::{EncodedModel, ModelHeader, NetEntry, MAX_LEVELS};
use super::Mode;
use crate::error::{Error, Result};
use crate::inr::{
    default_omega0, train_enhancement, train_plain_inr, train_scale_subnet, BandRef, BandScales, EnhanceOptions,
    NetSpec, ScaleSubnet, TrainConfig, TrainReport, WINDOWS,
};
use crate::nn::{quantize_f16, quantize_f16_compensated, MlpNet};
use crate::rng::derive_seed;
use crate::tensor::{normalize_scoped, points_on_axes, NdTensor, NormMode, NormScope};
use crate::wavelet::{dwt_pyramid, level_shapes, orientation_count, Family, WaveletPyramid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeConfig {
    pub mode: Mode,
    pub family: Family,
    pub levels: usize,
    /// Kernel window side of the enhancement predictor.
    pub window: usize,
    /// Total parameter budget over all networks.
    pub budget: usize,
    pub norm: NormMode,
    pub norm_scope: NormScope,
    pub train: TrainConfig,
    /// First-layer frequency of every network, replacing the per-scale
    /// schedule.
    pub omega0: Option<f64>,
    pub omega_hidden: f64,
    /// Frequencies of the enhancement predictor.
    pub enhance_omega0: f64,
    /// Detail scale generated by the predictor in `wien-inr` mode.
    pub enhance_scale: usize,
    pub warm_start: bool,
    /// Networks trained concurrently; 1 trains them in order.
    pub threads: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::WienInr,
            family: Family::Haar,
            levels: 3,
            window: 3,
            budget: 8192,
            norm: NormMode::Minmax,
            norm_scope: NormScope::Global,
            train: TrainConfig::default(),
            omega0: None,
            omega_hidden: 30.0,
            enhance_omega0: 30.0,
            enhance_scale: 1,
            warm_start: true,
            threads: 1,
        }
    }
}

impl EncodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.train.validate()?;
        if self.mode != Mode::Plain && !(1..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::InvalidLevels {
                levels: self.levels,
                reason: format!("must lie in 1..={MAX_LEVELS}"),
            });
        }
        if self.mode == Mode::WienInr {
            if !WINDOWS.contains(&self.window) {
                return bad(format!("window {} not in {WINDOWS:?}", self.window));
            }
            if self.enhance_scale == 0 || self.enhance_scale >= self.levels {
                return bad(format!(
                    "enhancement of scale {} needs a coarser detail scale; levels = {}",
                    self.enhance_scale, self.levels
                ));
            }
        }
        for (name, w) in [
            ("omega0", self.omega0.unwrap_or(1.0)),
            ("omega_hidden", self.omega_hidden),
            ("enhance_omega0", self.enhance_omega0),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("{name} must be positive, got {w}"));
            }
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    fn levels_for_mode(&self) -> usize {
        if self.mode == Mode::Plain {
            0
        } else {
            self.levels
        }
    }
}

/// Parameter budget whose binary16 payload is `ratio` times the raw tensor
/// size (header bytes excluded).
pub fn budget_for_ratio(ratio: f64, shape: &[usize], bytes_per_sample: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidConfig(format!("ratio must be positive, got {ratio}")));
    }
    let raw = shape.iter().product::<usize>() as f64 * bytes_per_sample as f64;
    Ok((ratio * raw / 2.0).floor() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandMse {
    pub band: BandRef,
    /// Mean squared error in the scaled coefficient domain.
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    #[serde(flatten)]
    pub role: NetRole,
    pub width: usize,
    pub params: usize,
    pub omega0: f64,
    pub steps: usize,
    pub best_step: usize,
    pub best_loss: f64,
    pub seconds: f64,
    pub bands: Vec<BandMse>,
}

/// Sidecar written next to every encoded model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub mode: Mode,
    pub shape: Vec<usize>,
    pub budget: usize,
    pub total_params: usize,
    pub header_bytes: u64,
    pub payload_bytes: u64,
    pub file_bytes: u64,
    pub raw_bytes: u64,
    /// File bytes over raw bytes.
    pub compression_ratio: f64,
    /// Payload bytes over raw bytes.
    pub payload_ratio: f64,
    pub encode_seconds: f64,
    pub plan: BudgetPlan,
    pub nets: Vec<NetReport>,
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub model: EncodedModel,
    /// Full-precision master weights, same order as the model's networks.
    pub masters: Vec<MlpNet>,
    pub report: EncodeReport,
}

fn net_spec(cfg: &EncodeConfig, plan: &BudgetPlan, entry: usize, p: usize) -> NetSpec {
    let dims = plan.dims(entry, p);
    let levels = cfg.levels_for_mode();
    let omega0 = match &plan.entries[entry].role {
        NetRole::Enhancement { .. } => cfg.enhance_omega0,
        _ if cfg.omega0.is_some() => cfg.omega0.unwrap_or_default(),
        NetRole::Plain => 30.0,
        NetRole::Subnet { scale, bands } => default_omega0(*scale, levels, bands == &[BandRef::Approx]),
    };
    let omega_hidden = match plan.entries[entry].role {
        NetRole::Enhancement { .. } => cfg.enhance_omega0,
        _ => cfg.omega_hidden,
    };
    NetSpec::new(dims, omega0, omega_hidden)
}

fn train_cfg(cfg: &EncodeConfig, entry: usize) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.train.seed, entry as u64),
        ..cfg.train.clone()
    }
}

struct Trained {
    net: MlpNet,
    report: TrainReport,
    seconds: f64,
}

/// Trains one subnet entry against the scaled pyramid.
fn train_subnet(
    pyr: &WaveletPyramid,
    scale: usize,
    bands: &[BandRef],
    spec: &NetSpec,
    cfg: &TrainConfig,
) -> Result<(ScaleSubnet, Trained)> {
    let start = Instant::now();
    let targets: Vec<&NdTensor> = bands.iter().map(|b| b.get(pyr)).collect();
    let (subnet, report) = train_scale_subnet(scale, bands, &targets, spec, cfg)?;
    let trained = Trained {
        net: subnet.net.clone(),
        report,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((subnet, trained))
}

/// Runs `jobs` in order, or on a pool of `threads` workers. Results come back
/// in job order either way.
fn run_jobs<T: Send>(threads: usize, jobs: Vec<Box<dyn FnOnce() -> Result<T> + Send + '_>>) -> Result<Vec<T>> {
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(|job| job()).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| jobs.into_par_iter().map(|job| job()).collect())
}

/// normalize → DWT → band scaling → per-network training → binary16.
pub fn encode(t: &NdTensor, cfg: &EncodeConfig) -> Result<EncodeOutput> {
    cfg.validate()?;
    if t.is_empty() {
        return Err(Error::InvalidShape("cannot encode an empty tensor".into()));
    }
    let start = Instant::now();
    let p = t.ndim();
    let levels = cfg.levels_for_mode();
    let (normalized, normalization) =
        normalize_scoped(t, cfg.norm, cfg.norm_scope).map_err(Error::stage("normalize"))?;
    let plan = allocate_params(cfg.budget, t.shape(), cfg.mode, levels, cfg.window, cfg.enhance_scale)
        .map_err(Error::stage("allocate"))?;
    let specs: Vec<NetSpec> = (0..plan.entries.len()).map(|i| net_spec(cfg, &plan, i, p)).collect();

    let (trained, band_scales) = if cfg.mode == Mode::Plain {
        let (net, report) = train_plain_inr(&normalized, &specs[0], &train_cfg(cfg, 0)).map_err(Error::stage("train"))?;
        let seconds = start.elapsed().as_secs_f64();
        (vec![Trained { net, report, seconds }], None)
    } else {
        let pyr = dwt_pyramid(&normalized, cfg.family, levels).map_err(Error::stage("dwt"))?;
        let scales = BandScales::fit(&pyr);
        let scaled = scales.scale(&pyr).map_err(Error::stage("scale bands"))?;
        let trained = train_wavelet(&scaled, &plan, &specs, cfg).map_err(Error::stage("train"))?;
        (trained, Some(scales))
    };

    let mut nets = Vec::with_capacity(trained.len());
    let mut weights = Vec::with_capacity(trained.len());
    let mut offset = 0u64;
    let shapes = match cfg.mode {
        Mode::Plain => vec![t.shape().to_vec()],
        _ => level_shapes(t.shape(), levels).map_err(Error::stage("quantize"))?,
    };
    let grid = |shape: &[usize]| {
        let axes: Vec<Vec<usize>> = shape.iter().map(|&d| (0..d).collect()).collect();
        points_on_axes(shape, &axes)
    };
    for (spec, (entry, tr)) in specs.iter().zip(plan.entries.iter().zip(&trained)) {
        let net = tr.net.with_wrapped_phases();
        let q = match &entry.role {
            NetRole::Plain => quantize_f16_compensated(&net, &grid(&shapes[0])),
            NetRole::Subnet { scale, .. } => quantize_f16_compensated(&net, &grid(&shapes[*scale])),
            NetRole::Enhancement { .. } => quantize_f16(&net),
        }
        .map_err(Error::stage("quantize"))?;
        let bytes = q.byte_len() as u64;
        nets.push(NetEntry {
            role: entry.role.clone(),
            spec: spec.clone(),
            offset,
            bytes,
        });
        offset += bytes;
        weights.push(q);
    }
    let header = ModelHeader {
        shape: t.shape().to_vec(),
        dtype: t.dtype(),
        mode: cfg.mode,
        family: (cfg.mode != Mode::Plain).then_some(cfg.family),
        levels,
        window: (cfg.mode == Mode::WienInr).then_some(cfg.window),
        normalization,
        band_scales,
        nets,
    };
    let model = EncodedModel::new(header, weights).map_err(Error::stage("serialize"))?;
    let encode_seconds = start.elapsed().as_secs_f64();

    let header_bytes = model.header_bytes()?;
    let payload_bytes = model.header.payload_bytes();
    let file_bytes = header_bytes + payload_bytes;
    let raw_bytes = t.size_bytes() as u64;
    let nets = plan
        .entries
        .iter()
        .zip(&specs)
        .zip(&trained)
        .map(|((entry, spec), tr)| NetReport {
            role: entry.role.clone(),
            width: entry.width,
            params: entry.params,
            omega0: spec.omega0,
            steps: tr.report.steps,
            best_step: tr.report.best_step,
            best_loss: tr.report.best_loss,
            seconds: tr.seconds,
            bands: generated_bands(&entry.role, p)
                .into_iter()
                .zip(&tr.report.channel_mse)
                .map(|(band, &mse)| BandMse { band, mse })
                .collect(),
        })
        .collect();
    let report = EncodeReport {
        mode: cfg.mode,
        shape: t.shape().to_vec(),
        budget: cfg.budget,
        total_params: plan.total_params(),
        header_bytes,
        payload_bytes,
        file_bytes,
        raw_bytes,
        compression_ratio: file_bytes as f64 / raw_bytes as f64,
        payload_ratio: payload_bytes as f64 / raw_bytes as f64,
        encode_seconds,
        plan,
        nets,
    };
    Ok(EncodeOutput {
        model,
        masters: trained.into_iter().map(|t| t.net).collect(),
        report,
    })
}

/// Bands a network generates, in output-channel order for subnets and
/// orientation order for the predictor.
fn generated_bands(role: &NetRole, p: usize) -> Vec<BandRef> {
    match role {
        NetRole::Plain => Vec::new(),
        NetRole::Subnet { bands, .. } => bands.clone(),
        NetRole::Enhancement { target_scale } => (1..=orientation_count(p))
            .map(|orientation| BandRef::Detail {
                scale: *target_scale,
                orientation,
            })
            .collect(),
    }
}

fn train_wavelet(pyr: &WaveletPyramid, plan: &BudgetPlan, specs: &[NetSpec], cfg: &EncodeConfig) -> Result<Vec<Trained>> {
    // Subnets are independent of each other; a predictor depends on the
    // subnet one scale above its target.
    type Job<'a> = Box<dyn FnOnce() -> Result<Option<(ScaleSubnet, Trained)>> + Send + 'a>;
    let jobs: Vec<Job> = plan
        .entries
        .iter()
        .enumerate()
        .map(|(i, entry)| -> Job {
            let tcfg = train_cfg(cfg, i);
            let spec = &specs[i];
            match &entry.role {
                NetRole::Subnet { scale, bands } => {
                    Box::new(move || train_subnet(pyr, *scale, bands, spec, &tcfg).map(Some))
                }
                _ => Box::new(|| Ok(None)),
            }
        })
        .collect();
    let subnets = run_jobs(cfg.threads, jobs)?;

    let mut out = Vec::with_capacity(plan.entries.len());
    for (i, entry) in plan.entries.iter().enumerate() {
        match &entry.role {
            NetRole::Enhancement { target_scale } => {
                let t = *target_scale;
                let coarse = subnets
                    .iter()
                    .flatten()
                    .map(|(s, _)| s)
                    .find(|s| s.scale == t + 1 && s.bands.len() == orientation_count(pyr.dim()) && s.bands[0] != BandRef::Approx)
                    .ok_or_else(|| Error::InvalidConfig(format!("no joint subnet at scale {}", t + 1)))?;
                let started = Instant::now();
                let fine: Vec<&NdTensor> = pyr.scale_bands(t).iter().collect();
                let opts = EnhanceOptions {
                    window: cfg.window,
                    warm_start: cfg.warm_start,
                };
                let (pred, report) = train_enhancement(&specs[i], coarse, &fine, &opts, &train_cfg(cfg, i))?;
                out.push(Trained {
                    net: pred.net,
                    report,
                    seconds: started.elapsed().as_secs_f64(),
                });
            }
            _ => {
                let (_, trained) = subnets[i].as_ref().expect("subnet trained above");
                out.push(Trained {
                    net: trained.net.clone(),
                    report: trained.report.clone(),
                    seconds: trained.seconds,
                });
            }
        }
    }
    Ok(out)
}
