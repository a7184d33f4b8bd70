//! Fidelity and rate metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NdTensor;
use crate::wavelet::{band_l2_norms, WaveletPyramid};

fn check_same(a: &NdTensor, b: &NdTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(reference: &NdTensor, test: &NdTensor) -> Result<f64> {
    check_same(reference, test)?;
    let s: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / reference.len() as f64)
}

/// `10 log10(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(reference: &NdTensor, test: &NdTensor, peak: f64) -> Result<f64> {
    let m = mse(reference, test)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over valid positions of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * x[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Single-scale SSIM (11×11 Gaussian window, σ = 1.5) averaged over valid
/// window positions. Tensors with more than two axes are treated as stacks
/// of planes over their last two axes, and the plane scores are averaged.
pub fn ssim(reference: &NdTensor, test: &NdTensor, peak: f64) -> Result<f64> {
    check_same(reference, test)?;
    let shape = reference.shape();
    if shape.len() < 2 {
        return Err(Error::InvalidShape("SSIM needs at least two axes".into()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape(format!(
            "SSIM window {SSIM_WINDOW} exceeds plane extent {h}×{w}"
        )));
    }
    let plane = h * w;
    let planes = reference.len() / plane;
    let total: f64 = (0..planes)
        .map(|k| {
            let r = k * plane..(k + 1) * plane;
            ssim_plane(&reference.data()[r.clone()], &test.data()[r], h, w, peak)
        })
        .sum();
    Ok(total / planes as f64)
}

pub fn pearson_r(reference: &NdTensor, test: &NdTensor) -> Result<f64> {
    check_same(reference, test)?;
    let constant = |t: &NdTensor| t.data().iter().all(|&v| v == t.data()[0]);
    if constant(reference) || constant(test) {
        return Err(Error::UndefinedCorrelation("an input is constant".into()));
    }
    let n = reference.len() as f64;
    let ma = reference.data().iter().sum::<f64>() / n;
    let mb = test.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in reference.data().iter().zip(test.data()) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input is constant".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Exact `num / den` in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidShape("ratio with zero denominator".into()));
        }
        let g = gcd(num, den).max(1);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

pub fn tensor_bytes(shape: &[usize], dtype_bytes: usize) -> Result<u64> {
    shape
        .iter()
        .try_fold(dtype_bytes as u64, |acc, &d| acc.checked_mul(d as u64))
        .ok_or_else(|| Error::InvalidShape(format!("size of {shape:?} overflows")))
}

/// Model bytes over raw tensor bytes, reduced exactly.
pub fn compression_ratio_exact(model_bytes: u64, shape: &[usize], dtype_bytes: usize) -> Result<Ratio> {
    let den = tensor_bytes(shape, dtype_bytes)?;
    if den == 0 {
        return Err(Error::InvalidShape("tensor size is zero".into()));
    }
    Ratio::new(model_bytes, den)
}

pub fn compression_ratio(model_bytes: u64, shape: &[usize], dtype_bytes: usize) -> Result<f64> {
    Ok(compression_ratio_exact(model_bytes, shape, dtype_bytes)?.to_f64())
}

/// Norms of one scale in the truth and reconstruction pyramids. Scale
/// `levels + 1` stands for the approximation band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleEnergy {
    pub scale: usize,
    pub truth: f64,
    pub recon: f64,
    /// `|recon - truth| / truth`, 0 when both vanish.
    pub deviation: f64,
}

pub fn band_energy_report(truth: &WaveletPyramid, recon: &WaveletPyramid) -> Result<Vec<ScaleEnergy>> {
    if truth.levels() != recon.levels() || truth.original_shape() != recon.original_shape() {
        return Err(Error::InconsistentPyramid(format!(
            "pyramids differ: {} levels over {:?} vs {} levels over {:?}",
            truth.levels(),
            truth.original_shape(),
            recon.levels(),
            recon.original_shape()
        )));
    }
    let (t, r) = (band_l2_norms(truth), band_l2_norms(recon));
    let dev = |a: f64, b: f64| {
        if a == 0.0 {
            if b == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (b - a).abs() / a
        }
    };
    let mut out: Vec<ScaleEnergy> = t
        .per_scale
        .iter()
        .zip(&r.per_scale)
        .enumerate()
        .map(|(j, (&a, &b))| ScaleEnergy {
            scale: j + 1,
            truth: a,
            recon: b,
            deviation: dev(a, b),
        })
        .collect();
    out.push(ScaleEnergy {
        scale: truth.levels() + 1,
        truth: t.approx,
        recon: r.approx,
        deviation: dev(t.approx, r.approx),
    });
    Ok(out)
}

/// Floats that may be infinite are written as JSON strings (`"inf"`).
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "lenient_f64")]
    pub psnr_db: f64,
    /// Absent for one-dimensional data or planes smaller than the window.
    pub ssim: Option<f64>,
    /// Absent when either input is constant.
    pub pearson_r: Option<f64>,
    pub compression_ratio: f64,
    /// Per-scale norms, finest first, approximation last.
    pub truth_l2: Vec<f64>,
    pub recon_l2: Vec<f64>,
    pub encode_seconds: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "psnr_db,ssim,pearson_r,compression_ratio,encode_seconds,truth_l2,recon_l2";

    /// Values in [`Self::CSV_HEADER`] order; norm lists are `;`-separated and
    /// absent values are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        format!(
            "{},{},{},{},{},{},{}",
            self.psnr_db,
            opt(self.ssim),
            opt(self.pearson_r),
            self.compression_ratio,
            self.encode_seconds,
            list(&self.truth_l2),
            list(&self.recon_l2)
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fidelity of `recon` against `truth` (both in the same intensity domain)
/// plus the rate of a `model_bytes` encoding.
pub fn evaluate(
    truth: &NdTensor,
    recon: &NdTensor,
    peak: f64,
    model_bytes: u64,
    truth_pyr: &WaveletPyramid,
    recon_pyr: &WaveletPyramid,
    encode_seconds: f64,
) -> Result<MetricsReport> {
    let energy = band_energy_report(truth_pyr, recon_pyr)?;
    Ok(MetricsReport {
        psnr_db: psnr(truth, recon, peak)?,
        ssim: ssim(truth, recon, peak).ok(),
        pearson_r: pearson_r(truth, recon).ok(),
        compression_ratio: compression_ratio(model_bytes, truth.shape(), truth.dtype().size_bytes())?,
        truth_l2: energy.iter().map(|e| e.truth).collect(),
        recon_l2: energy.iter().map(|e| e.recon).collect(),
        encode_seconds,
    })
}
