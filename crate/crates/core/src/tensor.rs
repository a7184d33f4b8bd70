//! Dense N-dimensional tensors, intensity normalization and coordinate grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of the original samples. Values are always held as
/// `f64` in memory; the tag decides byte accounting and file I/O.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }
}

impl std::str::FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "float32" => Ok(DType::F32),
            "f64" | "float64" => Ok(DType::F64),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NdTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::InvalidShape("tensor must have at least one axis".into()));
    }
    let mut count: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::InvalidShape(format!("element count overflows for {shape:?}")))?;
    }
    Ok(count)
}

impl NdTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count = check_shape(&shape)?;
        if data.len() != count {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                count
            )));
        }
        Ok(Self {
            shape,
            data,
            dtype: DType::F64,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let count = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; count],
            dtype: DType::F64,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Builds a tensor by evaluating `f` at every index tuple in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let count = check_shape(shape)?;
        let mut data = Vec::with_capacity(count);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..count {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            dtype: DType::F64,
        })
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * self.dtype.size_bytes()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        flat_index(&self.shape, idx)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(idx)?])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> NdTensor {
        NdTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: self.dtype,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sub-tensor at `index` along axis 0, dropping that axis. A 1-D tensor
    /// yields a single-element 1-D tensor.
    pub fn slice0(&self, index: usize) -> Result<NdTensor> {
        if index >= self.shape[0] {
            return Err(Error::IndexOutOfBounds {
                index: vec![index],
                shape: self.shape.clone(),
            });
        }
        let inner: Vec<usize> = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let n: usize = inner.iter().product();
        Ok(NdTensor {
            shape: inner,
            data: self.data[index * n..(index + 1) * n].to_vec(),
            dtype: self.dtype,
        })
    }

    /// Crops the half-open per-axis ranges.
    pub fn crop(&self, ranges: &[std::ops::Range<usize>]) -> Result<NdTensor> {
        if ranges.len() != self.shape.len() {
            return Err(Error::OutOfBoundsBox(format!(
                "box has {} axes, tensor has {}",
                ranges.len(),
                self.shape.len()
            )));
        }
        for (r, &d) in ranges.iter().zip(&self.shape) {
            if r.start >= r.end || r.end > d {
                return Err(Error::OutOfBoundsBox(format!(
                    "{}:{} not within extent {}",
                    r.start, r.end, d
                )));
            }
        }
        let out_shape: Vec<usize> = ranges.iter().map(|r| r.end - r.start).collect();
        let st = self.strides();
        NdTensor::from_fn(&out_shape, |idx| {
            let flat: usize = idx
                .iter()
                .zip(ranges)
                .zip(&st)
                .map(|((&i, r), &s)| (i + r.start) * s)
                .sum();
            self.data[flat]
        })
        .map(|t| t.with_dtype(self.dtype))
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        st[k] = st[k + 1] * shape[k + 1];
    }
    st
}

pub(crate) fn flat_index(shape: &[usize], idx: &[usize]) -> Result<usize> {
    if idx.len() != shape.len() || idx.iter().zip(shape).any(|(&i, &d)| i >= d) {
        return Err(Error::IndexOutOfBounds {
            index: idx.to_vec(),
            shape: shape.to_vec(),
        });
    }
    let mut flat = 0;
    for (&i, &d) in idx.iter().zip(shape) {
        flat = flat * d + i;
    }
    Ok(flat)
}

/// Advances a row-major index tuple; wraps to all zeros after the last one.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

// ---------------------------------------------------------------------------
// Normalization

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    Minmax,
    Log1pMax,
    None,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(NormMode::Minmax),
            "log1p" | "log1p-max" => Ok(NormMode::Log1pMax),
            "none" => Ok(NormMode::None),
            other => Err(Error::InvalidConfig(format!("unknown normalization `{other}`"))),
        }
    }
}

/// Affine (or log-affine) map taking raw samples into `[0, 1]`.
///
/// * `minmax`: `y = (x - offset) / scale`
/// * `log1p-max`: `y = ln(1 + x) / scale`, `offset` is always 0
/// * `none`: identity with `offset = 0`, `scale = 1`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub mode: NormMode,
    pub offset: f64,
    pub scale: f64,
}

impl NormalizationRecord {
    pub const IDENTITY: NormalizationRecord = NormalizationRecord {
        mode: NormMode::None,
        offset: 0.0,
        scale: 1.0,
    };

    fn fit(values: &[f64], mode: NormMode) -> Result<Self> {
        match mode {
            NormMode::None => Ok(Self::IDENTITY),
            NormMode::Minmax => {
                let (lo, hi) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                if !(hi > lo) {
                    return Err(Error::DegenerateRange(lo));
                }
                Ok(Self {
                    mode,
                    offset: lo,
                    scale: hi - lo,
                })
            }
            NormMode::Log1pMax => {
                let mut hi = f64::NEG_INFINITY;
                for &v in values {
                    if v < 0.0 || v.is_nan() {
                        return Err(Error::NegativeInput(v));
                    }
                    hi = hi.max(v.ln_1p());
                }
                if !(hi > 0.0) {
                    return Err(Error::DegenerateRange(0.0));
                }
                Ok(Self {
                    mode,
                    offset: 0.0,
                    scale: hi,
                })
            }
        }
    }

    pub fn forward(&self, x: f64) -> f64 {
        match self.mode {
            NormMode::None => x,
            NormMode::Minmax => (x - self.offset) / self.scale,
            NormMode::Log1pMax => x.ln_1p() / self.scale,
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match self.mode {
            NormMode::None => y,
            NormMode::Minmax => y * self.scale + self.offset,
            NormMode::Log1pMax => (y * self.scale).exp_m1(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.offset.is_finite() && self.scale.is_finite() && self.scale > 0.0
    }
}

/// Whether normalization statistics are taken over the whole tensor or
/// separately for each index of the leading axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    #[default]
    Global,
    PerSlice,
}

/// One record for [`NormScope::Global`], one per leading-axis slice otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scope: NormScope,
    pub records: Vec<NormalizationRecord>,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            scope: NormScope::Global,
            records: vec![NormalizationRecord::IDENTITY],
        }
    }

    pub fn mode(&self) -> NormMode {
        self.records.first().map_or(NormMode::None, |r| r.mode)
    }

    fn record_for_slice(&self, slice: usize) -> &NormalizationRecord {
        match self.scope {
            NormScope::Global => &self.records[0],
            NormScope::PerSlice => &self.records[slice],
        }
    }

    pub(crate) fn validate(&self, shape: &[usize]) -> Result<()> {
        let expected = match self.scope {
            NormScope::Global => 1,
            NormScope::PerSlice => shape[0],
        };
        if self.records.len() != expected || !self.records.iter().all(|r| r.is_valid()) {
            return Err(Error::MalformedHeader(format!(
                "normalization needs {expected} valid records, has {}",
                self.records.len()
            )));
        }
        Ok(())
    }

    /// Inverts the normalization over the whole tensor.
    pub fn invert(&self, t: &NdTensor) -> Result<NdTensor> {
        self.invert_rows(t, 0)
    }

    /// Inverts a block whose leading-axis index 0 corresponds to slice
    /// `first_slice` of the original tensor (used by ROI decoding).
    pub(crate) fn invert_rows(&self, t: &NdTensor, first_slice: usize) -> Result<NdTensor> {
        if self.scope == NormScope::PerSlice && first_slice + t.shape()[0] > self.records.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.records.len()],
                actual: vec![first_slice + t.shape()[0]],
            });
        }
        let row: usize = t.shape()[1..].iter().product();
        let mut out = t.clone();
        for (k, chunk) in out.data_mut().chunks_mut(row).enumerate() {
            let rec = self.record_for_slice(first_slice + k);
            chunk.iter_mut().for_each(|v| *v = rec.inverse(*v));
        }
        Ok(out)
    }
}

/// Maps samples into `[0, 1]` with global statistics.
pub fn normalize(t: &NdTensor, mode: NormMode) -> Result<(NdTensor, NormalizationRecord)> {
    let rec = NormalizationRecord::fit(t.data(), mode)?;
    Ok((t.map(|x| rec.forward(x)), rec))
}

pub fn denormalize(t: &NdTensor, rec: &NormalizationRecord) -> NdTensor {
    t.map(|y| rec.inverse(y))
}

/// Normalization with a configurable statistics scope.
pub fn normalize_scoped(
    t: &NdTensor,
    mode: NormMode,
    scope: NormScope,
) -> Result<(NdTensor, Normalization)> {
    match scope {
        NormScope::Global => {
            let (out, rec) = normalize(t, mode)?;
            Ok((
                out,
                Normalization {
                    scope,
                    records: vec![rec],
                },
            ))
        }
        NormScope::PerSlice => {
            let row: usize = t.shape()[1..].iter().product();
            let mut out = t.clone();
            let mut records = Vec::with_capacity(t.shape()[0]);
            for chunk in out.data_mut().chunks_mut(row) {
                let rec = NormalizationRecord::fit(chunk, mode)?;
                chunk.iter_mut().for_each(|v| *v = rec.forward(*v));
                records.push(rec);
            }
            Ok((out, Normalization { scope, records }))
        }
    }
}

// ---------------------------------------------------------------------------
// Coordinate grids

/// Coordinate of sample `index` on an axis of `extent` samples: the first
/// sample sits at -1, the last at +1; a single-sample axis sits at 0.
#[inline]
pub fn axis_coord(extent: usize, index: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        (2 * index) as f64 / (extent - 1) as f64 - 1.0
    }
}

/// Regular grid over `[-1, 1]^p` enumerated in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordGrid {
    shape: Vec<usize>,
}

impl CoordGrid {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of the sample at row-major position `flat`.
    pub fn coord(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut out = vec![0.0; self.shape.len()];
        for k in (0..self.shape.len()).rev() {
            let d = self.shape[k];
            out[k] = axis_coord(d, rem % d);
            rem /= d;
        }
        out
    }

    /// All coordinates as a flat `len × p` row-major matrix.
    pub fn points(&self) -> Vec<f64> {
        let axes: Vec<Vec<usize>> = self.shape.iter().map(|&d| (0..d).collect()).collect();
        points_on_axes(&self.shape, &axes)
    }
}

pub fn make_grid(shape: &[usize]) -> Result<CoordGrid> {
    check_shape(shape)?;
    Ok(CoordGrid {
        shape: shape.to_vec(),
    })
}

pub fn index_to_coord(shape: &[usize], index: &[usize]) -> Result<Vec<f64>> {
    flat_index(shape, index)?;
    Ok(index
        .iter()
        .zip(shape)
        .map(|(&i, &d)| axis_coord(d, i))
        .collect())
}

/// Coordinates of the Cartesian product of per-axis index lists on a grid of
/// `shape`, row-major over the lists, as a flat `n × p` matrix.
pub(crate) fn points_on_axes(shape: &[usize], axes: &[Vec<usize>]) -> Vec<f64> {
    let p = shape.len();
    let lens: Vec<usize> = axes.iter().map(Vec::len).collect();
    let n: usize = lens.iter().product();
    let coords: Vec<Vec<f64>> = axes
        .iter()
        .zip(shape)
        .map(|(ix, &d)| ix.iter().map(|&i| axis_coord(d, i)).collect())
        .collect();
    let mut out = Vec::with_capacity(n * p);
    let mut pos = vec![0usize; p];
    for _ in 0..n {
        for k in 0..p {
            out.push(coords[k][pos[k]]);
        }
        increment(&mut pos, &lens);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minmax_example() {
        let t = NdTensor::new(vec![3], vec![2.0, 4.0, 6.0]).unwrap();
        let (n, rec) = normalize(&t, NormMode::Minmax).unwrap();
        assert_eq!(n.data(), &[0.0, 0.5, 1.0]);
        assert_eq!((rec.offset, rec.scale), (2.0, 4.0));
        assert_eq!(denormalize(&n, &rec).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn log1p_example() {
        let e = std::f64::consts::E;
        let t = NdTensor::new(vec![2], vec![0.0, e - 1.0]).unwrap();
        let (n, rec) = normalize(&t, NormMode::Log1pMax).unwrap();
        assert!((rec.scale - 1.0).abs() < 1e-15);
        assert_eq!(n.data()[0], 0.0);
        assert!((n.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn none_is_identity() {
        let t = NdTensor::new(vec![3], vec![-5.0, 0.25, 9.0]).unwrap();
        let (n, rec) = normalize(&t, NormMode::None).unwrap();
        assert_eq!(n, t);
        assert_eq!(rec, NormalizationRecord::IDENTITY);
        assert_eq!(denormalize(&n, &rec), t);
    }

    #[test]
    fn normalization_errors() {
        let c = NdTensor::filled(&[4], 3.0).unwrap();
        assert!(matches!(normalize(&c, NormMode::Minmax), Err(Error::DegenerateRange(_))));
        let neg = NdTensor::new(vec![2], vec![1.0, -0.5]).unwrap();
        assert!(matches!(normalize(&neg, NormMode::Log1pMax), Err(Error::NegativeInput(_))));
    }

    #[test]
    fn per_slice_scope_roundtrip() {
        let t = NdTensor::from_fn(&[3, 4], |i| (i[0] * 10 + i[1]) as f64).unwrap();
        let (n, norm) = normalize_scoped(&t, NormMode::Minmax, NormScope::PerSlice).unwrap();
        assert_eq!(norm.records.len(), 3);
        for row in n.data().chunks(4) {
            assert_eq!(row, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        }
        let back = norm.invert(&n).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(&[3]).unwrap().points(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(
            make_grid(&[2, 2]).unwrap().points(),
            vec![-1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0]
        );
        assert_eq!(make_grid(&[1]).unwrap().points(), vec![0.0]);
        assert!(make_grid(&[3, 0]).is_err());
    }

    #[test]
    fn index_to_coord_examples() {
        assert_eq!(index_to_coord(&[550], &[0]).unwrap(), vec![-1.0]);
        assert_eq!(index_to_coord(&[550], &[549]).unwrap(), vec![1.0]);
        assert_eq!(index_to_coord(&[5], &[2]).unwrap(), vec![0.0]);
        assert!(matches!(
            index_to_coord(&[5], &[5]),
            Err(Error::IndexOutOfBounds { .. })
        ));
    }

    #[test]
    fn crop_and_slice() {
        let t = NdTensor::from_fn(&[4, 5], |i| (i[0] * 5 + i[1]) as f64).unwrap();
        let c = t.crop(&[1..3, 2..4]).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[7.0, 8.0, 12.0, 13.0]);
        assert_eq!(t.slice0(2).unwrap().data(), &[10.0, 11.0, 12.0, 13.0, 14.0]);
        assert!(t.crop(&[1..1, 0..5]).is_err());
        assert!(t.crop(&[0..5, 0..5]).is_err());
    }

    fn random_tensor() -> impl Strategy<Value = NdTensor> {
        prop::collection::vec(-1e3f64..1e3, 2..64)
            .prop_filter("non-constant", |v| v.iter().any(|&x| x != v[0]))
            .prop_map(|v| NdTensor::new(vec![v.len()], v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn minmax_roundtrip_in_unit_range(t in random_tensor()) {
            let (n, rec) = normalize(&t, NormMode::Minmax).unwrap();
            prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let back = denormalize(&n, &rec);
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * rec.scale.max(b.abs()));
            }
        }

        #[test]
        fn log1p_roundtrip_in_unit_range(t in random_tensor()) {
            let t = t.map(f64::abs);
            prop_assume!(t.data().iter().any(|&v| v > 0.0));
            let (n, rec) = normalize(&t, NormMode::Log1pMax).unwrap();
            prop_assert!(n.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let back = denormalize(&n, &rec);
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300) + 1e-300);
            }
        }

        #[test]
        fn none_roundtrip(t in random_tensor()) {
            let (n, rec) = normalize(&t, NormMode::None).unwrap();
            prop_assert_eq!(denormalize(&n, &rec), t);
        }

        #[test]
        fn grid_matches_index_to_coord(shape in prop::collection::vec(1usize..6, 1..=4)) {
            let grid = make_grid(&shape).unwrap();
            let pts = grid.points();
            let p = shape.len();
            let mut idx = vec![0usize; p];
            for flat in 0..grid.len() {
                let c = index_to_coord(&shape, &idx).unwrap();
                prop_assert_eq!(&pts[flat * p..(flat + 1) * p], c.as_slice());
                prop_assert_eq!(grid.coord(flat), c);
                increment(&mut idx, &shape);
            }
        }
    }
}
