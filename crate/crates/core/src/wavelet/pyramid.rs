use super::filters::{wavelet_filters, Family};
use super::transform::{analyze_axis, support_for, synthesize_axis};
use crate::error::{Error, Result};
use crate::tensor::NdTensor;

/// Multi-level separable decomposition.
///
/// Detail orientation `i` is a bitmask over axes: bit `k` set means the band
/// was high-pass filtered along axis `k`. Orientation 0 (all low-pass) only
/// exists as the input of the next level, or as the final `approx` band.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    family: Family,
    original_shape: Vec<usize>,
    approx: NdTensor,
    /// `details[j - 1][i - 1]` holds `d_j^i`, finest scale first.
    details: Vec<Vec<NdTensor>>,
}

/// Shapes of the bands at levels `0..=levels` (level 0 is the input shape).
pub fn level_shapes(shape: &[usize], levels: usize) -> Result<Vec<Vec<usize>>> {
    if levels < 1 {
        return Err(Error::InvalidLevels {
            levels,
            reason: "at least one level is required".into(),
        });
    }
    let mut out = vec![shape.to_vec()];
    for j in 1..=levels {
        let prev = &out[j - 1];
        if let Some(&d) = prev.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidLevels {
                levels,
                reason: format!("extent {d} at level {} cannot be split further", j - 1),
            });
        }
        out.push(prev.iter().map(|d| d.div_ceil(2)).collect());
    }
    Ok(out)
}

pub fn orientation_count(p: usize) -> usize {
    (1 << p) - 1
}

impl WaveletPyramid {
    /// Assembles a pyramid from bands, checking that all shapes chain.
    pub fn from_parts(
        family: Family,
        original_shape: Vec<usize>,
        approx: NdTensor,
        details: Vec<Vec<NdTensor>>,
    ) -> Result<Self> {
        let levels = details.len();
        let shapes = level_shapes(&original_shape, levels)
            .map_err(|e| Error::InconsistentPyramid(e.to_string()))?;
        let p = original_shape.len();
        if approx.shape() != shapes[levels].as_slice() {
            return Err(Error::InconsistentPyramid(format!(
                "approx band has shape {:?}, expected {:?}",
                approx.shape(),
                shapes[levels]
            )));
        }
        for (j, bands) in details.iter().enumerate() {
            if bands.len() != orientation_count(p) {
                return Err(Error::InconsistentPyramid(format!(
                    "scale {} has {} orientations, expected {}",
                    j + 1,
                    bands.len(),
                    orientation_count(p)
                )));
            }
            if let Some(b) = bands.iter().find(|b| b.shape() != shapes[j + 1].as_slice()) {
                return Err(Error::InconsistentPyramid(format!(
                    "scale {} band has shape {:?}, expected {:?}",
                    j + 1,
                    b.shape(),
                    shapes[j + 1]
                )));
            }
        }
        Ok(Self {
            family,
            original_shape,
            approx,
            details,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn original_shape(&self) -> &[usize] {
        &self.original_shape
    }

    pub fn dim(&self) -> usize {
        self.original_shape.len()
    }

    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn approx(&self) -> &NdTensor {
        &self.approx
    }

    pub fn approx_mut(&mut self) -> &mut NdTensor {
        &mut self.approx
    }

    /// Detail band `d_j^i`, `1 <= j <= J`, `1 <= i <= 2^p - 1`.
    pub fn detail(&self, scale: usize, orientation: usize) -> &NdTensor {
        &self.details[scale - 1][orientation - 1]
    }

    pub fn detail_mut(&mut self, scale: usize, orientation: usize) -> &mut NdTensor {
        &mut self.details[scale - 1][orientation - 1]
    }

    /// All orientations at one scale.
    pub fn scale_bands(&self, scale: usize) -> &[NdTensor] {
        &self.details[scale - 1]
    }

    /// Band shape at level `j` (0 = input).
    pub fn level_shape(&self, level: usize) -> Vec<usize> {
        if level == 0 {
            self.original_shape.clone()
        } else if level == self.levels() {
            self.approx.shape().to_vec()
        } else {
            self.details[level - 1][0].shape().to_vec()
        }
    }

    pub fn coefficient_count(&self) -> usize {
        self.approx.len() + self.details.iter().flatten().map(NdTensor::len).sum::<usize>()
    }

    pub fn energy(&self) -> f64 {
        let sq = |t: &NdTensor| t.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.approx) + self.details.iter().flatten().map(sq).sum::<f64>()
    }
}

/// J-level periodized decomposition of a p-dimensional tensor.
pub fn dwt_pyramid(t: &NdTensor, family: Family, levels: usize) -> Result<WaveletPyramid> {
    level_shapes(t.shape(), levels)?;
    let bank = wavelet_filters(family);
    let p = t.ndim();
    let mut current = t.clone();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        // bands[i] with orientation bitmask i over the axes processed so far
        let mut bands: Vec<(Vec<usize>, Vec<f64>)> =
            vec![(current.shape().to_vec(), current.data().to_vec())];
        for axis in 0..p {
            let mut next = vec![(Vec::new(), Vec::new()); bands.len() * 2];
            for (i, (shape, data)) in bands.into_iter().enumerate() {
                let (s, lo, hi) = analyze_axis(&shape, &data, axis, &bank)?;
                next[i] = (s.clone(), lo);
                next[i | (1 << axis)] = (s, hi);
            }
            bands = next;
        }
        let mut it = bands.into_iter();
        let (s0, a) = it.next().expect("approx band");
        let level: Vec<NdTensor> = it
            .map(|(s, d)| NdTensor::new(s, d))
            .collect::<Result<_>>()?;
        details.push(level);
        current = NdTensor::new(s0, a)?;
    }
    WaveletPyramid::from_parts(family, t.shape().to_vec(), current, details)
}

/// Inverse of one level restricted to per-axis output index lists.
///
/// `bands[i]` holds orientation `i` (0 = approx) sampled on the Cartesian
/// product of `coeff_idx`; the result is sampled on the product of `out_idx`.
pub(crate) fn synthesize_level(
    bands: Vec<Vec<f64>>,
    coeff_idx: &[Vec<usize>],
    out_idx: &[Vec<usize>],
    padded: &[usize],
    family: Family,
) -> Vec<f64> {
    let bank = wavelet_filters(family);
    let p = coeff_idx.len();
    let mut shape: Vec<usize> = coeff_idx.iter().map(Vec::len).collect();
    let mut bands = bands;
    for axis in (0..p).rev() {
        let half = bands.len() / 2;
        let mut merged = Vec::with_capacity(half);
        let mut out_shape = shape.clone();
        for i in 0..half {
            // orientations differing only in bit `axis`; bits above are gone
            let (s, y) = synthesize_axis(
                &shape,
                &bands[i],
                &bands[i | (1 << axis)],
                axis,
                &bank,
                padded[axis],
                &coeff_idx[axis],
                &out_idx[axis],
            );
            out_shape = s;
            merged.push(y);
        }
        shape = out_shape;
        bands = merged;
    }
    bands.pop().expect("single band after merging")
}

pub fn idwt_pyramid(pyr: &WaveletPyramid) -> Result<NdTensor> {
    // re-validate in case bands were mutated in place
    let shapes = level_shapes(&pyr.original_shape, pyr.levels())
        .map_err(|e| Error::InconsistentPyramid(e.to_string()))?;
    let mut current = pyr.approx.clone();
    for j in (1..=pyr.levels()).rev() {
        let coeff_shape = &shapes[j];
        let out_shape = &shapes[j - 1];
        let mut bands = Vec::with_capacity(1 << pyr.dim());
        if current.shape() != coeff_shape.as_slice() {
            return Err(Error::InconsistentPyramid(format!("approx at level {j}")));
        }
        bands.push(current.data().to_vec());
        for b in &pyr.details[j - 1] {
            if b.shape() != coeff_shape.as_slice() {
                return Err(Error::InconsistentPyramid(format!(
                    "band shape {:?} at scale {j}, expected {:?}",
                    b.shape(),
                    coeff_shape
                )));
            }
            bands.push(b.data().to_vec());
        }
        let coeff_idx: Vec<Vec<usize>> = coeff_shape.iter().map(|&h| (0..h).collect()).collect();
        let out_idx: Vec<Vec<usize>> = out_shape.iter().map(|&n| (0..n).collect()).collect();
        let padded: Vec<usize> = coeff_shape.iter().map(|&h| 2 * h).collect();
        let data = synthesize_level(bands, &coeff_idx, &out_idx, &padded, pyr.family);
        current = NdTensor::new(out_shape.clone(), data)?;
    }
    Ok(current.with_dtype(pyr.approx.dtype()))
}

/// Per-axis coefficient index lists needed at every level to synthesize the
/// output samples `roi` (per-axis sorted index lists at level 0).
/// Entry `j - 1` holds the lists for level `j`.
pub(crate) fn roi_supports(
    shape: &[usize],
    levels: usize,
    family: Family,
    roi: &[Vec<usize>],
) -> Result<Vec<Vec<Vec<usize>>>> {
    let shapes = level_shapes(shape, levels)?;
    let bank = wavelet_filters(family);
    let mut out = Vec::with_capacity(levels);
    let mut wanted = roi.to_vec();
    for j in 1..=levels {
        let next: Vec<Vec<usize>> = wanted
            .iter()
            .zip(&shapes[j])
            .map(|(idx, &h)| support_for(idx, 2 * h, &bank))
            .collect();
        out.push(next.clone());
        wanted = next;
    }
    Ok(out)
}

/// Euclidean norms of every band, plus per-scale aggregates over orientations.
#[derive(Clone, Debug, PartialEq)]
pub struct BandNorms {
    pub approx: f64,
    /// `per_scale[j - 1]`: norm of all orientations of `d_j` together.
    pub per_scale: Vec<f64>,
    /// `per_orientation[j - 1][i - 1]`: norm of `d_j^i`.
    pub per_orientation: Vec<Vec<f64>>,
}

pub fn band_l2_norms(pyr: &WaveletPyramid) -> BandNorms {
    let sq = |t: &NdTensor| t.data().iter().map(|v| v * v).sum::<f64>();
    let per_orientation: Vec<Vec<f64>> = pyr
        .details
        .iter()
        .map(|bands| bands.iter().map(|b| sq(b).sqrt()).collect())
        .collect();
    let per_scale = pyr
        .details
        .iter()
        .map(|bands| bands.iter().map(sq).sum::<f64>().sqrt())
        .collect();
    BandNorms {
        approx: sq(&pyr.approx).sqrt(),
        per_scale,
        per_orientation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random(shape: &[usize], seed: u64) -> NdTensor {
        let mut rng = Stream::new(seed);
        NdTensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0)).unwrap()
    }

    fn max_abs(a: &NdTensor, b: &NdTensor) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn shapes_and_counts_2d() {
        let t = random(&[64, 64], 1);
        let pyr = dwt_pyramid(&t, Family::Haar, 3).unwrap();
        assert_eq!(pyr.approx().shape(), &[8, 8]);
        for (j, s) in [(3, 8), (2, 16), (1, 32)] {
            assert_eq!(pyr.scale_bands(j).len(), 3);
            assert!(pyr.scale_bands(j).iter().all(|b| b.shape() == [s, s]));
        }
        assert_eq!(pyr.coefficient_count(), 4096);
    }

    #[test]
    fn three_dims_have_seven_orientations() {
        let pyr = dwt_pyramid(&random(&[6, 8, 10], 2), Family::Db2, 2).unwrap();
        assert_eq!(pyr.scale_bands(1).len(), 7);
        assert_eq!(pyr.scale_bands(2).len(), 7);
    }

    #[test]
    fn constant_image_haar() {
        let c = 0.3;
        let t = NdTensor::filled(&[8, 6], c).unwrap();
        let pyr = dwt_pyramid(&t, Family::Haar, 1).unwrap();
        assert!(pyr.approx().data().iter().all(|v| (v - 2.0 * c).abs() < 1e-15));
        for i in 1..=3 {
            assert!(pyr.detail(1, i).data().iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn orientation_bitmask_convention() {
        // A signal varying only along axis 1 puts detail energy in bit 1 only.
        let t = NdTensor::from_fn(&[8, 8], |i| if i[1] % 2 == 0 { 1.0 } else { -1.0 }).unwrap();
        let pyr = dwt_pyramid(&t, Family::Haar, 1).unwrap();
        let n = band_l2_norms(&pyr);
        assert!(n.per_orientation[0][0] < 1e-12); // i = 1: high along axis 0
        assert!(n.per_orientation[0][1] > 1.0); // i = 2: high along axis 1
        assert!(n.per_orientation[0][2] < 1e-12);
    }

    #[test]
    fn roundtrip_odd_extents_all_families() {
        let t = random(&[33, 37], 3);
        for f in Family::ALL {
            let pyr = dwt_pyramid(&t, f, 3).unwrap();
            assert!(pyr.coefficient_count() >= t.len());
            let back = idwt_pyramid(&pyr).unwrap();
            assert!(max_abs(&back, &t) < 1e-8, "{f}");
        }
    }

    #[test]
    fn parseval_orthogonal_even() {
        let t = random(&[32, 16], 4);
        let e: f64 = t.data().iter().map(|v| v * v).sum();
        for f in Family::ALL.into_iter().filter(|f| f.is_orthogonal()) {
            let pyr = dwt_pyramid(&t, f, 3).unwrap();
            assert!((pyr.energy() - e).abs() < 1e-6 * e, "{f}");
        }
    }

    #[test]
    fn zeroing_finest_scale_projects() {
        let t = random(&[32, 32], 5);
        let mut pyr = dwt_pyramid(&t, Family::Db2, 2).unwrap();
        for i in 1..=3 {
            pyr.detail_mut(1, i).data_mut().fill(0.0);
        }
        let low = idwt_pyramid(&pyr).unwrap();
        let again = dwt_pyramid(&low, Family::Db2, 2).unwrap();
        let n = band_l2_norms(&again);
        assert!(n.per_scale[0] < 1e-10, "{}", n.per_scale[0]);
    }

    #[test]
    fn errors() {
        let t = random(&[4, 4], 6);
        assert!(matches!(dwt_pyramid(&t, Family::Haar, 0), Err(Error::InvalidLevels { .. })));
        assert!(matches!(dwt_pyramid(&t, Family::Haar, 3), Err(Error::InvalidLevels { .. })));
        let pyr = dwt_pyramid(&t, Family::Haar, 1).unwrap();
        let bad = WaveletPyramid::from_parts(
            Family::Haar,
            vec![4, 4],
            NdTensor::zeros(&[3, 2]).unwrap(),
            pyr.details.clone(),
        );
        assert!(matches!(bad, Err(Error::InconsistentPyramid(_))));
    }

    #[test]
    fn norms() {
        let t = NdTensor::zeros(&[8, 8]).unwrap();
        let mut pyr = dwt_pyramid(&t, Family::Haar, 2).unwrap();
        let n = band_l2_norms(&pyr);
        assert!(n.per_scale.iter().all(|&v| v == 0.0) && n.approx == 0.0);
        pyr.detail_mut(1, 1).data_mut()[3] = 1.0;
        assert_eq!(band_l2_norms(&pyr).per_scale[0], 1.0);

        let pyr = dwt_pyramid(&random(&[16, 16], 7), Family::Sym4, 2).unwrap();
        let n = band_l2_norms(&pyr);
        for j in 0..2 {
            let s: f64 = n.per_orientation[j].iter().map(|v| v * v).sum();
            assert!((n.per_scale[j].powi(2) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn roi_support_reconstructs_crop() {
        let t = random(&[21, 18], 8);
        for f in Family::ALL {
            let pyr = dwt_pyramid(&t, f, 3).unwrap();
            let roi = vec![(4..9).collect::<Vec<_>>(), (15..18).collect::<Vec<_>>()];
            let supports = roi_supports(t.shape(), 3, f, &roi).unwrap();
            let shapes = level_shapes(t.shape(), 3).unwrap();
            // gather coefficients on the supports, then synthesize down
            let gather = |band: &NdTensor, idx: &[Vec<usize>]| -> Vec<f64> {
                let mut out = Vec::new();
                for &a in &idx[0] {
                    for &b in &idx[1] {
                        out.push(band.get(&[a, b]).unwrap());
                    }
                }
                out
            };
            let mut current = gather(pyr.approx(), &supports[2]);
            for j in (1..=3).rev() {
                let mut bands = vec![current];
                for i in 1..=3 {
                    bands.push(gather(pyr.detail(j, i), &supports[j - 1]));
                }
                let out_idx = if j == 1 { roi.clone() } else { supports[j - 2].clone() };
                let padded: Vec<usize> = shapes[j].iter().map(|h| 2 * h).collect();
                current = synthesize_level(bands, &supports[j - 1], &out_idx, &padded, f);
            }
            let crop = t.crop(&[4..9, 15..18]).unwrap();
            let err = current.iter().zip(crop.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "{f}: {err}");
        }
    }
}
