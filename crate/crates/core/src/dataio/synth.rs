//! Deterministic synthetic fixtures in `[0, 1]`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::tensor::{check_shape, strides, NdTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticKind {
    /// Squared magnitude of a Gaussian-filtered complex white field.
    /// `grain` is the filter width in samples; `envelope` (relative to the
    /// extent, 0 for none) multiplies the intensity by a centered Gaussian.
    Speckle { grain: f64, envelope: f64 },
    /// Gaussian peaks on a smooth background.
    Peaks { count: usize, width: f64 },
    /// Sum of `components` sinusoids with at most `max_cycles` periods
    /// across each axis.
    Smooth { components: usize, max_cycles: usize },
    /// Patches of oriented stripes with varying frequency.
    Texture { patches: usize },
}

impl SyntheticKind {
    pub fn speckle() -> Self {
        Self::Speckle {
            grain: 1.0,
            envelope: 0.0,
        }
    }

    pub fn peaks() -> Self {
        Self::Peaks { count: 12, width: 0.04 }
    }

    pub fn smooth() -> Self {
        Self::Smooth {
            components: 3,
            max_cycles: 2,
        }
    }

    pub fn texture() -> Self {
        Self::Texture { patches: 6 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Speckle { .. } => "speckle",
            Self::Peaks { .. } => "peaks",
            Self::Smooth { .. } => "smooth",
            Self::Texture { .. } => "texture",
        }
    }
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speckle" => Ok(Self::speckle()),
            "peaks" => Ok(Self::peaks()),
            "smooth" => Ok(Self::smooth()),
            "texture" | "barbara" => Ok(Self::texture()),
            other => Err(Error::InvalidConfig(format!(
                "unknown synthetic kind {other:?} (speckle, peaks, smooth, texture)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub shape: Vec<usize>,
    pub seed: u64,
}

pub fn generate(spec: &SyntheticSpec) -> Result<NdTensor> {
    check_shape(&spec.shape)?;
    let raw = match &spec.kind {
        SyntheticKind::Speckle { grain, envelope } => speckle(&spec.shape, *grain, *envelope, spec.seed)?,
        SyntheticKind::Peaks { count, width } => peaks(&spec.shape, *count, *width, spec.seed)?,
        SyntheticKind::Smooth { components, max_cycles } => {
            smooth(&spec.shape, *components, *max_cycles, spec.seed)?
        }
        SyntheticKind::Texture { patches } => texture(&spec.shape, *patches, spec.seed)?,
    };
    rescale_unit(raw)
}

fn rescale_unit(t: NdTensor) -> Result<NdTensor> {
    let (lo, hi) = t.min_max();
    if hi > lo {
        Ok(t.map(|v| (v - lo) / (hi - lo)))
    } else {
        Ok(t.map(|_| 0.0))
    }
}

/// Position of `i` on an axis of `d` samples, in `[0, 1)`.
fn unit(i: usize, d: usize) -> f64 {
    i as f64 / d as f64
}

/// Periodic Gaussian taps of width `sigma` (normalized to unit sum).
fn gaussian_taps(sigma: f64, extent: usize) -> Vec<(isize, f64)> {
    let reach = ((4.0 * sigma).ceil() as isize).min(extent as isize / 2).max(0);
    let mut taps: Vec<(isize, f64)> = (-reach..=reach)
        .map(|o| (o, (-0.5 * (o as f64 / sigma).powi(2)).exp()))
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= total);
    taps
}

/// Circular convolution of `data` with `taps` along `axis`.
fn filter_axis(data: &[f64], shape: &[usize], axis: usize, taps: &[(isize, f64)]) -> Vec<f64> {
    let st = strides(shape);
    let d = shape[axis] as isize;
    let s = st[axis];
    let mut out = vec![0.0; data.len()];
    for (flat, o) in out.iter_mut().enumerate() {
        let i = ((flat / s) % shape[axis]) as isize;
        let base = flat - i as usize * s;
        *o = taps
            .iter()
            .map(|&(off, w)| w * data[base + (i + off).rem_euclid(d) as usize * s])
            .sum();
    }
    out
}

fn speckle(shape: &[usize], grain: f64, envelope: f64, seed: u64) -> Result<NdTensor> {
    if !(grain > 0.0 && grain.is_finite()) || !(envelope >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "speckle needs grain > 0 and envelope >= 0, got {grain} and {envelope}"
        )));
    }
    let n: usize = shape.iter().product();
    let mut rng = Stream::new(derive_seed(seed, 1));
    let mut re: Vec<f64> = Vec::with_capacity(n);
    let mut im: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        re.push(rng.normal());
        im.push(rng.normal());
    }
    for (axis, &d) in shape.iter().enumerate() {
        if d > 1 {
            let taps = gaussian_taps(grain, d);
            re = filter_axis(&re, shape, axis, &taps);
            im = filter_axis(&im, shape, axis, &taps);
        }
    }
    let st = strides(shape);
    NdTensor::from_fn(shape, |idx| {
        let flat: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
        let mut v = re[flat] * re[flat] + im[flat] * im[flat];
        if envelope > 0.0 {
            let r2: f64 = idx
                .iter()
                .zip(shape)
                .map(|(&i, &d)| ((unit(i, d) - 0.5) / envelope).powi(2))
                .sum();
            v *= (-0.5 * r2).exp();
        }
        v
    })
}

fn peaks(shape: &[usize], count: usize, width: f64, seed: u64) -> Result<NdTensor> {
    if !(width > 0.0) {
        return Err(Error::InvalidConfig(format!("peak width must be positive, got {width}")));
    }
    let p = shape.len();
    let mut rng = Stream::new(derive_seed(seed, 2));
    let centers: Vec<(Vec<f64>, f64)> = (0..count)
        .map(|_| ((0..p).map(|_| rng.uniform()).collect(), 0.3 + 0.7 * rng.uniform()))
        .collect();
    let tilt: Vec<f64> = (0..p).map(|_| rng.uniform_in(-0.2, 0.2)).collect();
    NdTensor::from_fn(shape, |idx| {
        let x: Vec<f64> = idx.iter().zip(shape).map(|(&i, &d)| unit(i, d)).collect();
        let background: f64 = 0.2
            + x.iter()
                .zip(&tilt)
                .map(|(xi, t)| t * (PI * xi).cos())
                .sum::<f64>();
        let bumps: f64 = centers
            .iter()
            .map(|(c, a)| {
                let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                a * (-0.5 * r2 / (width * width)).exp()
            })
            .sum();
        background + bumps
    })
}

fn smooth(shape: &[usize], components: usize, max_cycles: usize, seed: u64) -> Result<NdTensor> {
    if components == 0 || max_cycles == 0 {
        return Err(Error::InvalidConfig("smooth needs at least one component and cycle".into()));
    }
    let p = shape.len();
    let mut rng = Stream::new(derive_seed(seed, 3));
    let waves: Vec<(Vec<f64>, f64, f64)> = (0..components)
        .map(|_| {
            let freq = (0..p)
                .map(|_| rng.uniform_in(0.25, max_cycles as f64))
                .collect();
            (freq, rng.uniform_in(0.0, TAU), rng.uniform_in(0.5, 1.0))
        })
        .collect();
    NdTensor::from_fn(shape, |idx| {
        waves
            .iter()
            .map(|(f, phase, amp)| {
                let arg: f64 = idx
                    .iter()
                    .zip(shape)
                    .zip(f)
                    .map(|((&i, &d), fk)| fk * unit(i, d))
                    .sum();
                amp * (TAU * arg + phase).sin()
            })
            .sum()
    })
}

fn texture(shape: &[usize], patches: usize, seed: u64) -> Result<NdTensor> {
    if patches == 0 {
        return Err(Error::InvalidConfig("texture needs at least one patch".into()));
    }
    let p = shape.len();
    let mut rng = Stream::new(derive_seed(seed, 4));
    // each patch: center, radius, direction, spatial frequency (cycles/extent)
    let blobs: Vec<(Vec<f64>, f64, Vec<f64>, f64)> = (0..patches)
        .map(|_| {
            let center = (0..p).map(|_| rng.uniform()).collect();
            let dir: Vec<f64> = (0..p).map(|_| rng.normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            (
                center,
                rng.uniform_in(0.15, 0.35),
                dir.into_iter().map(|v| v / norm).collect(),
                rng.uniform_in(6.0, 24.0),
            )
        })
        .collect();
    NdTensor::from_fn(shape, |idx| {
        let x: Vec<f64> = idx.iter().zip(shape).map(|(&i, &d)| unit(i, d)).collect();
        let base = 0.5 + 0.2 * (TAU * x[0]).sin();
        base + blobs
            .iter()
            .map(|(c, radius, dir, freq)| {
                let r2: f64 = x.iter().zip(c).map(|(xi, ci)| (xi - ci).powi(2)).sum();
                let phase: f64 = x.iter().zip(dir).map(|(xi, di)| xi * di).sum();
                (-0.5 * r2 / (radius * radius)).exp() * (TAU * freq * phase).sin()
            })
            .sum::<f64>()
    })
}
