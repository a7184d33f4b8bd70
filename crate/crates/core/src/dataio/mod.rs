//! Tensor files (NPY, raw little-endian), PGM slice export, and synthetic
//! fixtures.

mod npy;
mod synth;

use std::io::Write;
use std::path::Path;

pub use npy::{npy_bytes, parse_npy, read_npy, write_npy};
pub use synth::{generate, SyntheticKind, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::{check_shape, DType, NdTensor};

/// Reads a row-major little-endian file whose size must match `shape`.
pub fn read_raw(path: impl AsRef<Path>, shape: &[usize], dtype: DType) -> Result<NdTensor> {
    let count = check_shape(shape)?;
    let expected = count as u64 * dtype.size_bytes() as u64;
    let actual = std::fs::metadata(path.as_ref())?.len();
    if actual != expected {
        return Err(Error::SizeMismatch { expected, actual });
    }
    let bytes = std::fs::read(path)?;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(NdTensor::new(shape.to_vec(), npy::decode_le(&bytes, dtype))?.with_dtype(dtype))
}

pub fn write_raw(t: &NdTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(t.size_bytes());
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads `.npy` files directly; anything else needs `raw` shape and dtype.
pub fn read_tensor(path: impl AsRef<Path>, raw: Option<(&[usize], DType)>) -> Result<NdTensor> {
    match raw {
        Some((shape, dtype)) => read_raw(path, shape, dtype),
        None => read_npy(path),
    }
}

/// 8-bit binary PGM of a 2-D tensor (or slice `index` along the first axis
/// of a 3-D one), linearly mapped from its own min..max.
pub fn pgm_bytes(t: &NdTensor, index: usize) -> Result<Vec<u8>> {
    let plane = match t.ndim() {
        2 => t.clone(),
        3 => t.slice0(index)?,
        n => return Err(Error::InvalidShape(format!("PGM export needs 2-D or 3-D data, got {n}-D"))),
    };
    let (h, w) = (plane.shape()[0], plane.shape()[1]);
    let (lo, hi) = plane.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        plane
            .data()
            .iter()
            .map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn write_pgm(t: &NdTensor, index: usize, path: impl AsRef<Path>) -> Result<()> {
    std::fs::File::create(path)?.write_all(&pgm_bytes(t, index)?)?;
    Ok(())
}
