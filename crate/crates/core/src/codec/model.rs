//! Model container: `"WIEN"` | version `u16` | header length `u32` | JSON
//! header | binary16 payloads, all little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::budget::NetRole;
use super::Mode;
use crate::error::{Error, Result};
use crate::inr::{kernel_len, BandRef, BandScales, NetSpec, WINDOWS};
use crate::nn::{dequantize_f16, MlpNet, QuantizedWeights};
use crate::tensor::{check_shape, DType, Normalization};
use crate::wavelet::{level_shapes, orientation_count, Family};

pub const MAGIC: [u8; 4] = *b"WIEN";
pub const FORMAT_VERSION: u16 = 1;
pub const PREAMBLE_BYTES: usize = 4 + 2 + 4;

/// Decoder limits; headers beyond them are rejected before any allocation.
pub const MAX_HEADER_BYTES: usize = 1 << 24;
pub const MAX_ELEMENTS: usize = 1 << 28;
pub const MAX_NET_PARAMS: usize = 1 << 26;
pub const MAX_NETS: usize = 4096;
pub const MAX_DIM: usize = 8;
pub const MAX_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    #[serde(flatten)]
    pub role: NetRole,
    pub spec: NetSpec,
    /// Byte offset of the payload, relative to the end of the header.
    pub offset: u64,
    pub bytes: u64,
}

/// Everything but the weights. Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub mode: Mode,
    pub family: Option<Family>,
    pub levels: usize,
    pub window: Option<usize>,
    pub normalization: Normalization,
    pub band_scales: Option<BandScales>,
    pub nets: Vec<NetEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedModel {
    pub header: ModelHeader,
    /// Weights of `header.nets`, same order.
    pub weights: Vec<QuantizedWeights>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn limit(msg: impl Into<String>) -> Error {
    Error::LimitExceeded(msg.into())
}

impl ModelHeader {
    /// Structural checks: limits, coverage of every band exactly once, and
    /// contiguous payload offsets.
    pub fn validate(&self) -> Result<()> {
        let p = self.shape.len();
        if p == 0 || p > MAX_DIM {
            return Err(limit(format!("{p} axes (1..={MAX_DIM} supported)")));
        }
        self.shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| limit(format!("shape {:?} exceeds {MAX_ELEMENTS} elements", self.shape)))?;
        check_shape(&self.shape).map_err(|e| bad(e.to_string()))?;
        self.normalization.validate(&self.shape)?;
        if self.nets.len() > MAX_NETS {
            return Err(limit(format!("{} networks", self.nets.len())));
        }
        let mut offset = 0u64;
        for (k, net) in self.nets.iter().enumerate() {
            let d = &net.spec.dims;
            if d.hidden.len() > 64 {
                return Err(limit(format!("network {k} has {} hidden layers", d.hidden.len())));
            }
            let count = d
                .checked_parameter_count()
                .filter(|&c| c <= MAX_NET_PARAMS)
                .ok_or_else(|| limit(format!("network {k} parameter count")))?;
            d.validate().map_err(|e| bad(format!("network {k}: {e}")))?;
            if !(net.spec.omega0 > 0.0 && net.spec.omega0.is_finite())
                || !(net.spec.omega_hidden > 0.0 && net.spec.omega_hidden.is_finite())
            {
                return Err(bad(format!("network {k} has invalid frequencies")));
            }
            if d.input != p {
                return Err(bad(format!("network {k} takes {} inputs, data has {p} axes", d.input)));
            }
            if net.offset != offset || net.bytes != 2 * count as u64 {
                return Err(bad(format!(
                    "network {k} payload at {}+{}, expected {}+{}",
                    net.offset,
                    net.bytes,
                    offset,
                    2 * count
                )));
            }
            offset += net.bytes;
        }
        match self.mode {
            Mode::Plain => self.validate_plain(),
            _ => self.validate_wavelet(),
        }
    }

    fn validate_plain(&self) -> Result<()> {
        if self.levels != 0 || self.family.is_some() || self.band_scales.is_some() || self.window.is_some() {
            return Err(bad("plain models carry no wavelet settings"));
        }
        match self.nets.as_slice() {
            [net] if net.role == NetRole::Plain && net.spec.dims.output == 1 => Ok(()),
            _ => Err(bad("plain models hold exactly one single-output network")),
        }
    }

    fn validate_wavelet(&self) -> Result<()> {
        let p = self.shape.len();
        if self.family.is_none() {
            return Err(bad("wavelet family missing"));
        }
        if !(1..=MAX_LEVELS).contains(&self.levels) {
            return Err(bad(format!("levels {} outside 1..={MAX_LEVELS}", self.levels)));
        }
        level_shapes(&self.shape, self.levels).map_err(|e| bad(e.to_string()))?;
        let o = orientation_count(p);
        let scales = self
            .band_scales
            .as_ref()
            .ok_or_else(|| bad("band scales missing"))?;
        if scales.details.len() != self.levels
            || scales.details.iter().any(|d| d.len() != o)
            || !scales.is_valid()
        {
            return Err(bad("band scales do not match the pyramid"));
        }
        if self.mode == Mode::WienInr {
            let w = self.window.ok_or_else(|| bad("window missing"))?;
            if !WINDOWS.contains(&w) {
                return Err(bad(format!("window {w} not in {WINDOWS:?}")));
            }
        } else if self.window.is_some() {
            return Err(bad("window set outside wien-inr mode"));
        }
        let mut covered = std::collections::HashSet::new();
        let mut claim = |b: BandRef| -> Result<()> {
            let ok = match b {
                BandRef::Approx => true,
                BandRef::Detail { scale, orientation } => {
                    (1..=self.levels).contains(&scale) && (1..=o).contains(&orientation)
                }
            };
            if !ok || !covered.insert(b) {
                return Err(bad(format!("band {b:?} is out of range or generated twice")));
            }
            Ok(())
        };
        for net in &self.nets {
            match &net.role {
                NetRole::Plain => return Err(bad("plain network inside a wavelet model")),
                NetRole::Subnet { scale, bands } => {
                    if bands.is_empty() || bands.len() != net.spec.dims.output {
                        return Err(bad("subnet outputs do not match its bands"));
                    }
                    for &b in bands {
                        let level = match b {
                            BandRef::Approx => self.levels,
                            BandRef::Detail { scale, .. } => scale,
                        };
                        if level != *scale {
                            return Err(bad(format!("band {b:?} listed under scale {scale}")));
                        }
                        claim(b)?;
                    }
                }
                NetRole::Enhancement { target_scale } => {
                    let t = *target_scale;
                    if self.mode != Mode::WienInr || t == 0 || t >= self.levels {
                        return Err(bad(format!("enhancement of scale {t} not allowed here")));
                    }
                    let w = self.window.unwrap_or(0);
                    if net.spec.dims.output != o * kernel_len(w, p) {
                        return Err(bad("enhancement outputs do not match the window"));
                    }
                    let source_ok = self.nets.iter().any(|n| match &n.role {
                        NetRole::Subnet { scale, bands } => {
                            *scale == t + 1 && bands.len() == o && !bands.contains(&BandRef::Approx)
                        }
                        _ => false,
                    });
                    if !source_ok {
                        return Err(bad(format!("no joint subnet at scale {} to enhance", t + 1)));
                    }
                    for i in 1..=o {
                        claim(BandRef::Detail { scale: t, orientation: i })?;
                    }
                }
            }
        }
        if covered.len() != 1 + self.levels * o {
            return Err(bad(format!(
                "{} of {} bands have a generator",
                covered.len(),
                1 + self.levels * o
            )));
        }
        Ok(())
    }

    pub fn payload_bytes(&self) -> u64 {
        self.nets.iter().map(|n| n.bytes).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.nets.iter().map(|n| n.spec.dims.parameter_count()).sum()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }
}

impl EncodedModel {
    pub fn new(header: ModelHeader, weights: Vec<QuantizedWeights>) -> Result<Self> {
        let m = Self { header, weights };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.header.validate()?;
        if self.weights.len() != self.header.nets.len() {
            return Err(bad(format!(
                "{} weight payloads for {} networks",
                self.weights.len(),
                self.header.nets.len()
            )));
        }
        for (k, (w, n)) in self.weights.iter().zip(&self.header.nets).enumerate() {
            if w.dims != n.spec.dims || w.byte_len() as u64 != n.bytes {
                return Err(bad(format!("payload {k} does not match its header entry")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = self.header.to_json()?;
        let mut out = Vec::with_capacity(PREAMBLE_BYTES + header.len() + self.header.payload_bytes() as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend(w.to_le_bytes());
        }
        Ok(out)
    }

    /// Exact size of [`Self::to_bytes`].
    pub fn serialized_size_bytes(&self) -> Result<u64> {
        Ok((PREAMBLE_BYTES + self.header.to_json()?.len()) as u64 + self.header.payload_bytes())
    }

    pub fn header_bytes(&self) -> Result<u64> {
        Ok((PREAMBLE_BYTES + self.header.to_json()?.len()) as u64)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, start) = parse_header(bytes)?;
        let payload = &bytes[start..];
        let expected = header.payload_bytes();
        if payload.len() as u64 != expected {
            return Err(Error::Truncation {
                what: "weight payload".into(),
                expected,
                actual: payload.len() as u64,
            });
        }
        let weights = header
            .nets
            .iter()
            .map(|n| {
                let range = n.offset as usize..(n.offset + n.bytes) as usize;
                QuantizedWeights::from_le_bytes(n.spec.dims.clone(), &payload[range])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(header, weights)
    }

    /// Networks with binary16 weights widened back to `f64`.
    pub fn networks(&self) -> Result<Vec<MlpNet>> {
        self.weights
            .iter()
            .zip(&self.header.nets)
            .map(|(w, n)| dequantize_f16(w, n.spec.omega0, n.spec.omega_hidden))
            .collect()
    }
}

/// Parses and validates the preamble and header; returns the header and
/// the offset of the first payload byte.
pub fn parse_header(bytes: &[u8]) -> Result<(ModelHeader, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Truncation {
            what: "magic".into(),
            expected: 4,
            actual: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < PREAMBLE_BYTES {
        return Err(Error::Truncation {
            what: "preamble".into(),
            expected: PREAMBLE_BYTES as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if hlen > MAX_HEADER_BYTES {
        return Err(limit(format!("header of {hlen} bytes")));
    }
    let end = PREAMBLE_BYTES + hlen;
    if bytes.len() < end {
        return Err(Error::Truncation {
            what: "header".into(),
            expected: hlen as u64,
            actual: (bytes.len() - PREAMBLE_BYTES) as u64,
        });
    }
    let header: ModelHeader =
        serde_json::from_slice(&bytes[PREAMBLE_BYTES..end]).map_err(|e| bad(e.to_string()))?;
    header.validate()?;
    Ok((header, end))
}

pub fn save_model(m: &EncodedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, m.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EncodedModel> {
    EncodedModel::from_bytes(&std::fs::read(path)?)
}

/// Reads only the preamble and header of a model file, plus the file size.
pub fn read_header(path: impl AsRef<Path>) -> Result<(ModelHeader, u64)> {
    let mut f = std::fs::File::open(path)?;
    let size = f.metadata()?.len();
    let mut pre = [0u8; PREAMBLE_BYTES];
    let got = read_up_to(&mut f, &mut pre)?;
    if got < PREAMBLE_BYTES {
        return parse_header(&pre[..got]).map(|(h, _)| (h, size));
    }
    let hlen = u32::from_le_bytes(pre[6..10].try_into().expect("4 bytes")) as usize;
    let mut buf = pre.to_vec();
    if hlen <= MAX_HEADER_BYTES {
        buf.resize(PREAMBLE_BYTES + hlen, 0);
        let got = read_up_to(&mut f, &mut buf[PREAMBLE_BYTES..])?;
        buf.truncate(PREAMBLE_BYTES + got);
    }
    let (header, _) = parse_header(&buf)?;
    Ok((header, size))
}

fn read_up_to(f: &mut impl std::io::Read, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = f.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}
