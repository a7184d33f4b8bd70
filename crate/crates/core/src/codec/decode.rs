use std::collections::HashMap;
use std::ops::Range;

use super::budget::NetRole;
use super::model::{EncodedModel, ModelHeader};
use super::Mode;
use crate::error::{Error, Result};
use crate::inr::{apply_kernels, gather_patches, kernel_len, BandRef, Patcher};
use crate::nn::MlpNet;
use crate::tensor::{points_on_axes, strides, NdTensor, NormScope};
use crate::wavelet::{level_shapes, orientation_count, roi_supports, synthesize_level};

/// Points per predictor evaluation; bounds the kernel buffer.
const KERNEL_CHUNK: usize = 4096;

/// Parses `a0:b0,a1:b1,...` into half-open per-axis ranges.
pub fn parse_box(text: &str) -> Result<Vec<Range<usize>>> {
    let bad = || Error::OutOfBoundsBox(format!("cannot parse `{text}`, expected a0:b0,a1:b1,..."));
    text.split(',')
        .map(|part| {
            let (a, b) = part.trim().split_once(':').ok_or_else(bad)?;
            let a = a.trim().parse::<usize>().map_err(|_| bad())?;
            let b = b.trim().parse::<usize>().map_err(|_| bad())?;
            Ok(a..b)
        })
        .collect()
}

/// Row-major flat positions of the Cartesian product of `lists` in `shape`.
fn product_flat(shape: &[usize], lists: &[Vec<usize>]) -> Vec<usize> {
    let st = strides(shape);
    let mut out = vec![0usize];
    for (k, list) in lists.iter().enumerate() {
        let prev = std::mem::take(&mut out);
        out.reserve(prev.len() * list.len());
        for base in prev {
            out.extend(list.iter().map(|&i| base + i * st[k]));
        }
    }
    out
}

fn full_lists(shape: &[usize]) -> Vec<Vec<usize>> {
    shape.iter().map(|&d| (0..d).collect()).collect()
}

struct Decoder<'a> {
    header: &'a ModelHeader,
    nets: &'a [MlpNet],
    /// Output shape followed by every pyramid level shape.
    shapes: Vec<Vec<usize>>,
}

impl<'a> Decoder<'a> {
    fn new(m: &'a EncodedModel, nets: &'a [MlpNet], shape: &[usize]) -> Result<Self> {
        m.validate()?;
        if nets.len() != m.header.nets.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} networks supplied for {} header entries",
                nets.len(),
                m.header.nets.len()
            )));
        }
        for (net, entry) in nets.iter().zip(&m.header.nets) {
            if net.dims() != &entry.spec.dims {
                return Err(Error::InvalidNetwork(format!(
                    "network dims {:?} differ from header {:?}",
                    net.dims(),
                    entry.spec.dims
                )));
            }
        }
        let shapes = match m.header.mode {
            Mode::Plain => vec![shape.to_vec()],
            _ => level_shapes(shape, m.header.levels)?,
        };
        Ok(Self {
            header: &m.header,
            nets,
            shapes,
        })
    }

    fn p(&self) -> usize {
        self.shapes[0].len()
    }

    /// Network output on the product of per-axis index lists of a grid.
    fn forward_on(&self, net: usize, shape: &[usize], lists: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.nets[net].forward(&points_on_axes(shape, lists))
    }

    fn factor(&self, band: BandRef) -> f64 {
        self.header.band_scales.as_ref().map_or(1.0, |s| s.factor(band))
    }

    /// Unscaled values of every band, each on the product of the index lists
    /// of its level (`lists[j - 1]` for level `j`).
    fn bands(&self, lists: &[Vec<Vec<usize>>]) -> Result<HashMap<BandRef, Vec<f64>>> {
        let mut out = HashMap::new();
        for (n, entry) in self.header.nets.iter().enumerate() {
            match &entry.role {
                NetRole::Plain => unreachable!("validated wavelet model"),
                NetRole::Subnet { scale, bands } => {
                    let raw = self.forward_on(n, &self.shapes[*scale], &lists[scale - 1])?;
                    let c = bands.len();
                    for (k, &band) in bands.iter().enumerate() {
                        let f = self.factor(band);
                        out.insert(band, raw.iter().skip(k).step_by(c).map(|v| v * f).collect());
                    }
                }
                NetRole::Enhancement { target_scale } => {
                    let t = *target_scale;
                    for (i, values) in self.enhance(n, t, &lists[t - 1])?.into_iter().enumerate() {
                        let band = BandRef::Detail {
                            scale: t,
                            orientation: i + 1,
                        };
                        let f = self.factor(band);
                        out.insert(band, values.into_iter().map(|v| v * f).collect());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Predictor `n` generating scale `t` on the product of `lists`, one
    /// vector per orientation, in the predictor's scaled domain.
    fn enhance(&self, n: usize, t: usize, lists: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let p = self.p();
        let o = orientation_count(p);
        let window = self.header.window.ok_or_else(|| Error::MalformedHeader("window missing".into()))?;
        let k = kernel_len(window, p);
        let source = self
            .header
            .nets
            .iter()
            .position(|e| match &e.role {
                NetRole::Subnet { scale, bands } => {
                    *scale == t + 1 && bands.len() == o && bands.iter().all(|b| *b != BandRef::Approx)
                }
                _ => false,
            })
            .ok_or_else(|| Error::MalformedHeader(format!("no joint subnet at scale {}", t + 1)))?;
        let shape = &self.shapes[t];
        let r = window / 2;
        // the coarse field is only needed where some window reaches
        let reach: Vec<Vec<usize>> = lists
            .iter()
            .zip(shape)
            .map(|(list, &d)| {
                let mut v: Vec<usize> = list
                    .iter()
                    .flat_map(|&i| i.saturating_sub(r)..=(i + r).min(d - 1))
                    .collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let coarse = self.forward_on(source, shape, &reach)?;
        let size: usize = shape.iter().product();
        let mut fields = vec![vec![0.0; size]; o];
        for (row, &pos) in product_flat(shape, &reach).iter().enumerate() {
            for (c, field) in fields.iter_mut().enumerate() {
                field[pos] = coarse[row * o + c];
            }
        }
        let field_refs: Vec<&[f64]> = fields.iter().map(Vec::as_slice).collect();
        let patcher = Patcher::new(shape, window)?;
        let idx = product_flat(shape, lists);
        let points = points_on_axes(shape, lists);
        let mut out = vec![Vec::with_capacity(idx.len()); o];
        for (chunk, pts) in idx.chunks(KERNEL_CHUNK).zip(points.chunks(KERNEL_CHUNK * p)) {
            let kernels = self.nets[n].forward(pts)?;
            let patches = gather_patches(&field_refs, &patcher, chunk);
            let values = apply_kernels(&kernels, &patches, k);
            for row in values.chunks(o) {
                for (c, &v) in row.iter().enumerate() {
                    out[c].push(v);
                }
            }
        }
        Ok(out)
    }

    /// Normalized-domain samples on the product of `roi`.
    fn samples(&self, roi: &[Vec<usize>]) -> Result<Vec<f64>> {
        if self.header.mode == Mode::Plain {
            return self.forward_on(0, &self.shapes[0], roi);
        }
        let levels = self.header.levels;
        let family = self.header.family.ok_or_else(|| Error::MalformedHeader("family missing".into()))?;
        let supports = roi_supports(&self.shapes[0], levels, family, roi)?;
        let mut bands = self.bands(&supports)?;
        let o = orientation_count(self.p());
        let mut current = bands.remove(&BandRef::Approx).expect("validated coverage");
        for j in (1..=levels).rev() {
            let mut level = Vec::with_capacity(o + 1);
            level.push(current);
            for orientation in 1..=o {
                level.push(bands.remove(&BandRef::Detail { scale: j, orientation }).expect("validated coverage"));
            }
            let out_idx = if j > 1 { &supports[j - 2] } else { roi };
            let padded: Vec<usize> = self.shapes[j].iter().map(|&h| 2 * h).collect();
            current = synthesize_level(level, &supports[j - 1], out_idx, &padded, family);
        }
        Ok(current)
    }

    fn tensor(&self, roi: &[Vec<usize>]) -> Result<NdTensor> {
        let shape: Vec<usize> = roi.iter().map(Vec::len).collect();
        let t = NdTensor::new(shape, self.samples(roi)?)?;
        let first = roi[0][0];
        Ok(self.header.normalization.invert_rows(&t, first)?.with_dtype(self.header.dtype))
    }
}

/// Reconstructs the full tensor from binary16 weights.
pub fn decode(m: &EncodedModel) -> Result<NdTensor> {
    decode_with_nets(m, &m.networks()?)
}

/// Reconstructs the full tensor with caller-supplied weights for the
/// model's networks (e.g. full-precision masters).
pub fn decode_with_nets(m: &EncodedModel, nets: &[MlpNet]) -> Result<NdTensor> {
    let d = Decoder::new(m, nets, &m.header.shape)?;
    d.tensor(&full_lists(&m.header.shape))
}

/// Decodes onto a grid `factor` times denser along every axis by evaluating
/// each network on the denser grids of its level.
pub fn decode_scaled(m: &EncodedModel, factor: usize) -> Result<NdTensor> {
    if factor == 0 {
        return Err(Error::InvalidConfig("scale factor must be at least 1".into()));
    }
    if factor > 1 && m.header.normalization.scope != NormScope::Global {
        return Err(Error::InvalidConfig(
            "scaled decode needs global normalization statistics".into(),
        ));
    }
    let shape: Vec<usize> = m.header.shape.iter().map(|&d| d * factor).collect();
    let elements = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n <= super::model::MAX_ELEMENTS)
        .ok_or_else(|| Error::LimitExceeded(format!("scaled shape {shape:?}")))?;
    let _ = elements;
    let nets = m.networks()?;
    let d = Decoder::new(m, &nets, &shape)?;
    d.tensor(&full_lists(&shape))
}

/// Reconstructs only the box `ranges` (half-open, one per axis), touching
/// just the coefficients whose synthesis support reaches it.
pub fn decode_roi(m: &EncodedModel, ranges: &[Range<usize>]) -> Result<NdTensor> {
    let shape = &m.header.shape;
    if ranges.len() != shape.len() {
        return Err(Error::OutOfBoundsBox(format!(
            "{} ranges for a {}-axis tensor",
            ranges.len(),
            shape.len()
        )));
    }
    for (axis, (r, &d)) in ranges.iter().zip(shape).enumerate() {
        if r.start >= r.end || r.end > d {
            return Err(Error::OutOfBoundsBox(format!(
                "axis {axis}: {}:{} outside 0:{d} or empty",
                r.start, r.end
            )));
        }
    }
    let nets = m.networks()?;
    let d = Decoder::new(m, &nets, shape)?;
    let roi: Vec<Vec<usize>> = ranges.iter().map(|r| r.clone().collect()).collect();
    d.tensor(&roi)
}
