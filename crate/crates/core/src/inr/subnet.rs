use serde::{Deserialize, Serialize};

use super::train::{fit, DirectFit, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{siren_init, MlpNet, NetDims};
use crate::tensor::{make_grid, CoordGrid, NdTensor};
use crate::wavelet::{orientation_count, WaveletPyramid};

/// Architecture and sine frequencies of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub dims: NetDims,
    pub omega0: f64,
    pub omega_hidden: f64,
}

impl NetSpec {
    pub fn new(dims: NetDims, omega0: f64, omega_hidden: f64) -> Self {
        Self {
            dims,
            omega0,
            omega_hidden,
        }
    }

    /// `ω0 = ω_h = 30`.
    pub fn siren(dims: NetDims) -> Self {
        Self::new(dims, 30.0, 30.0)
    }

    pub fn init(&self, seed: u64) -> Result<MlpNet> {
        siren_init(&self.dims, self.omega0, self.omega_hidden, seed)
    }
}

/// Default first-layer frequency for a band group: 30 for the approximation,
/// `30 · 2^min(J - j, 2)` for detail scale `j`.
pub fn default_omega0(scale: usize, levels: usize, approx: bool) -> f64 {
    if approx {
        30.0
    } else {
        30.0 * f64::from(1u32 << levels.saturating_sub(scale).min(2))
    }
}

/// One pyramid band: the approximation or `d_j^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandRef {
    Approx,
    Detail { scale: usize, orientation: usize },
}

impl BandRef {
    pub fn get<'a>(&self, pyr: &'a WaveletPyramid) -> &'a NdTensor {
        match *self {
            BandRef::Approx => pyr.approx(),
            BandRef::Detail { scale, orientation } => pyr.detail(scale, orientation),
        }
    }

    pub fn get_mut<'a>(&self, pyr: &'a mut WaveletPyramid) -> &'a mut NdTensor {
        match *self {
            BandRef::Approx => pyr.approx_mut(),
            BandRef::Detail { scale, orientation } => pyr.detail_mut(scale, orientation),
        }
    }

    /// Every band of a `levels`-level pyramid over `p` axes, approximation
    /// first, then coarse to fine.
    pub fn all(p: usize, levels: usize) -> Vec<BandRef> {
        let mut out = vec![BandRef::Approx];
        for scale in (1..=levels).rev() {
            for orientation in 1..=orientation_count(p) {
                out.push(BandRef::Detail { scale, orientation });
            }
        }
        out
    }
}

/// Symmetric max-abs factors mapping every band into `[-1, 1]`.
///
/// A band is stored as `coefficient / factor`; all-zero bands keep factor 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandScales {
    pub approx: f64,
    /// `details[j - 1][i - 1]` scales `d_j^i`.
    pub details: Vec<Vec<f64>>,
}

fn max_abs_factor(t: &NdTensor) -> f64 {
    let m = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

impl BandScales {
    pub fn fit(pyr: &WaveletPyramid) -> Self {
        Self {
            approx: max_abs_factor(pyr.approx()),
            details: (1..=pyr.levels())
                .map(|j| pyr.scale_bands(j).iter().map(max_abs_factor).collect())
                .collect(),
        }
    }

    pub fn factor(&self, band: BandRef) -> f64 {
        match band {
            BandRef::Approx => self.approx,
            BandRef::Detail { scale, orientation } => self.details[scale - 1][orientation - 1],
        }
    }

    pub fn is_valid(&self) -> bool {
        std::iter::once(&self.approx)
            .chain(self.details.iter().flatten())
            .all(|f| f.is_finite() && *f > 0.0)
    }

    fn apply(&self, pyr: &WaveletPyramid, divide: bool) -> Result<WaveletPyramid> {
        if self.details.len() != pyr.levels()
            || self.details.iter().any(|d| d.len() != orientation_count(pyr.dim()))
        {
            return Err(Error::InconsistentPyramid(
                "band scales do not match the pyramid".into(),
            ));
        }
        let mut out = pyr.clone();
        for band in BandRef::all(pyr.dim(), pyr.levels()) {
            let f = self.factor(band);
            let t = band.get_mut(&mut out);
            if divide {
                t.data_mut().iter_mut().for_each(|v| *v /= f);
            } else {
                t.data_mut().iter_mut().for_each(|v| *v *= f);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, pyr: &WaveletPyramid) -> Result<WaveletPyramid> {
        self.apply(pyr, true)
    }

    pub fn unscale(&self, pyr: &WaveletPyramid) -> Result<WaveletPyramid> {
        self.apply(pyr, false)
    }
}

/// A network whose output channel `c` generates `bands[c]` on the grid of
/// `band_shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSubnet {
    /// Pyramid level of the bands (`J` for the approximation).
    pub scale: usize,
    pub bands: Vec<BandRef>,
    pub band_shape: Vec<usize>,
    pub net: MlpNet,
}

impl ScaleSubnet {
    /// Rasterizes every channel on the subnet's own band grid.
    pub fn rasterize(&self) -> Result<Vec<NdTensor>> {
        upsample_eval(self, &make_grid(&self.band_shape)?)
    }
}

/// Splits a row-major `n × c` output into `c` tensors of `shape`.
pub(crate) fn split_channels(out: &[f64], channels: usize, shape: &[usize]) -> Result<Vec<NdTensor>> {
    let n = out.len() / channels;
    (0..channels)
        .map(|c| NdTensor::new(shape.to_vec(), (0..n).map(|i| out[i * channels + c]).collect()))
        .collect()
}

fn interleave(bands: &[&NdTensor]) -> Vec<f64> {
    let c = bands.len();
    let n = bands[0].len();
    let mut out = vec![0.0; n * c];
    for (k, b) in bands.iter().enumerate() {
        for (i, &v) in b.data().iter().enumerate() {
            out[i * c + k] = v;
        }
    }
    out
}

/// Fits one network to the tensor over its own coordinate grid.
pub fn train_plain_inr(t: &NdTensor, spec: &NetSpec, cfg: &TrainConfig) -> Result<(MlpNet, TrainReport)> {
    if t.is_empty() {
        return Err(Error::InvalidShape("cannot fit an empty tensor".into()));
    }
    if spec.dims.input != t.ndim() || spec.dims.output != 1 {
        return Err(Error::InvalidNetwork(format!(
            "a plain fit of a {}-D tensor needs {}→1 dims, got {:?}",
            t.ndim(),
            t.ndim(),
            spec.dims
        )));
    }
    let obj = DirectFit {
        inputs: make_grid(t.shape())?.points(),
        targets: t.data().to_vec(),
        input_dim: t.ndim(),
        channels: 1,
    };
    let mut net = spec.init(cfg.seed)?;
    let report = fit(&mut net, &obj, cfg)?;
    Ok((net, report))
}

/// Fits one network jointly to `bands` (already scaled), which must share a
/// shape. Output channel `c` predicts `bands[c]`; the report carries the
/// per-channel MSE.
pub fn train_scale_subnet(
    scale: usize,
    refs: &[BandRef],
    bands: &[&NdTensor],
    spec: &NetSpec,
    cfg: &TrainConfig,
) -> Result<(ScaleSubnet, TrainReport)> {
    let first = bands
        .first()
        .ok_or_else(|| Error::InvalidShape("no bands to fit".into()))?;
    if refs.len() != bands.len() {
        return Err(Error::InvalidConfig(format!(
            "{} band labels for {} bands",
            refs.len(),
            bands.len()
        )));
    }
    if let Some(b) = bands.iter().find(|b| b.shape() != first.shape()) {
        return Err(Error::ShapeMismatch {
            expected: first.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    if spec.dims.input != first.ndim() || spec.dims.output != bands.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} bands of a {}-D grid need {}→{} dims, got {:?}",
            bands.len(),
            first.ndim(),
            first.ndim(),
            bands.len(),
            spec.dims
        )));
    }
    let obj = DirectFit {
        inputs: make_grid(first.shape())?.points(),
        targets: interleave(bands),
        input_dim: first.ndim(),
        channels: bands.len(),
    };
    let mut net = spec.init(cfg.seed)?;
    let report = fit(&mut net, &obj, cfg)?;
    Ok((
        ScaleSubnet {
            scale,
            bands: refs.to_vec(),
            band_shape: first.shape().to_vec(),
            net,
        },
        report,
    ))
}

/// Evaluates the subnet on another grid over the same `[-1, 1]^p` domain,
/// one tensor per output channel.
pub fn upsample_eval(subnet: &ScaleSubnet, grid: &CoordGrid) -> Result<Vec<NdTensor>> {
    if grid.dim() != subnet.net.dims().input {
        return Err(Error::ShapeMismatch {
            expected: vec![subnet.net.dims().input],
            actual: vec![grid.dim()],
        });
    }
    let out = subnet.net.forward(&grid.points())?;
    split_channels(&out, subnet.net.dims().output, grid.shape())
}
