//! NPY format version 1.0, C order, little-endian `f4`/`f8` only.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DType, NdTensor};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

fn descr(dtype: DType) -> &'static str {
    match dtype {
        DType::F32 => "<f4",
        DType::F64 => "<f8",
    }
}

pub fn npy_bytes(t: &NdTensor) -> Vec<u8> {
    let shape = match t.shape() {
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        descr(t.dtype()),
        shape
    );
    // pad so the data starts on a 64-byte boundary, newline last
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + t.size_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match t.dtype() {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

pub fn write_npy(t: &NdTensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&npy_bytes(t))?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NdTensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_npy(&bytes)
}

struct Header {
    dtype: DType,
    shape: Vec<usize>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedNpy(msg.into())
}

/// Value text following `'key':` in the header dict.
fn field<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| malformed(format!("missing key {key:?}")))?
        + pat.len();
    Ok(dict[start..].trim_start())
}

fn parse_header(text: &str) -> Result<Header> {
    let dict = text.trim_end();
    if !dict.starts_with('{') || !dict.ends_with('}') {
        return Err(malformed("header is not a dict literal"));
    }
    let descr = field(dict, "descr")?;
    let quote = descr
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| malformed("descr is not a string"))?;
    let end = descr[1..]
        .find(quote)
        .ok_or_else(|| malformed("unterminated descr"))?;
    let dtype = match &descr[1..end + 1] {
        "<f4" => DType::F32,
        "<f8" => DType::F64,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    let order = field(dict, "fortran_order")?;
    if order.starts_with("True") {
        return Err(Error::FortranOrder);
    }
    if !order.starts_with("False") {
        return Err(malformed("fortran_order is not a bool"));
    }
    let shape_text = field(dict, "shape")?;
    let close = shape_text
        .find(')')
        .filter(|_| shape_text.starts_with('('))
        .ok_or_else(|| malformed("shape is not a tuple"))?;
    let shape = shape_text[1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| malformed(format!("bad extent {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() {
        return Err(Error::InvalidShape("0-d arrays are not supported".into()));
    }
    Ok(Header { dtype, shape })
}

pub fn parse_npy(bytes: &[u8]) -> Result<NdTensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(malformed("missing \\x93NUMPY magic"));
    }
    if bytes[6] != 1 {
        return Err(malformed(format!("format version {}.{}", bytes[6], bytes[7])));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let text = bytes
        .get(10..10 + hlen)
        .ok_or_else(|| malformed("header runs past end of file"))?;
    let text = std::str::from_utf8(text).map_err(|_| malformed("header is not ASCII"))?;
    let header = parse_header(text)?;
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed("element count overflows"))?;
    let width = header.dtype.size_bytes();
    let payload = &bytes[10 + hlen..];
    let expected = count as u64 * width as u64;
    if payload.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: payload.len() as u64,
        });
    }
    let data = decode_le(payload, header.dtype);
    Ok(NdTensor::new(header.shape, data)?.with_dtype(header.dtype))
}

pub(crate) fn decode_le(payload: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    }
}
