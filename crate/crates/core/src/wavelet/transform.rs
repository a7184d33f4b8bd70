//! Periodized single-level transforms on 1-D signals and along tensor axes.
//!
//! Odd-length signals are extended by one wrapped sample (`x[n] = x[0]`) so
//! each channel holds exactly `ceil(n / 2)` coefficients.

use super::filters::{FilterBank, Taps};
use crate::error::{Error, Result};

#[inline]
fn padded_len(n: usize) -> usize {
    n + (n & 1)
}

fn analyze_lane(x: &[f64], taps: &Taps, out: &mut [f64]) {
    let n = x.len();
    let m = padded_len(n) as isize;
    for (k, o) in out.iter_mut().enumerate() {
        let base = 2 * k as isize + taps.start;
        let mut acc = 0.0;
        for (t, &c) in taps.coeffs.iter().enumerate() {
            let idx = (base + t as isize).rem_euclid(m) as usize;
            acc += c * if idx < n { x[idx] } else { x[0] };
        }
        *o = acc;
    }
}

/// Synthesizes samples `out_idx` of a padded signal of length `m` from the
/// coefficients at positions `coeff_idx` (sorted, subset of `0..m/2`).
/// `lookup[k]` gives the position of coefficient `k` inside the lanes.
fn synthesize_lane(
    lo: &[f64],
    hi: &[f64],
    bank: &FilterBank,
    m: usize,
    lookup: &[usize],
    out_idx: &[usize],
    out: &mut [f64],
) {
    let m = m as isize;
    let gather = |i: usize, taps: &Taps, coeffs: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (t, &c) in taps.coeffs.iter().enumerate() {
            let r = (i as isize - taps.start - t as isize).rem_euclid(m);
            if r & 1 == 0 {
                acc += c * coeffs[lookup[(r / 2) as usize]];
            }
        }
        acc
    };
    for (o, &i) in out.iter_mut().zip(out_idx) {
        *o = gather(i, &bank.synthesis_lo, lo) + gather(i, &bank.synthesis_hi, hi);
    }
}

/// One analysis level on a 1-D signal.
pub fn dwt1d(signal: &[f64], bank: &FilterBank) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() < 2 {
        return Err(Error::SignalTooShort(signal.len()));
    }
    let half = signal.len().div_ceil(2);
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    analyze_lane(signal, &bank.analysis_lo, &mut a);
    analyze_lane(signal, &bank.analysis_hi, &mut d);
    Ok((a, d))
}

/// One synthesis level; `original_len` must be `2·len - 1` or `2·len`.
pub fn idwt1d(approx: &[f64], detail: &[f64], bank: &FilterBank, original_len: usize) -> Result<Vec<f64>> {
    if approx.len() != detail.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![approx.len()],
            actual: vec![detail.len()],
        });
    }
    let half = approx.len();
    if half == 0 || original_len.div_ceil(2) != half {
        return Err(Error::InvalidShape(format!(
            "original length {original_len} incompatible with {half} coefficients"
        )));
    }
    let lookup: Vec<usize> = (0..half).collect();
    let out_idx: Vec<usize> = (0..original_len).collect();
    let mut out = vec![0.0; original_len];
    synthesize_lane(approx, detail, bank, 2 * half, &lookup, &out_idx, &mut out);
    Ok(out)
}

struct Lanes {
    outer: usize,
    inner: usize,
}

fn lanes(shape: &[usize], axis: usize) -> Lanes {
    Lanes {
        outer: shape[..axis].iter().product(),
        inner: shape[axis + 1..].iter().product(),
    }
}

/// Analysis along one axis; returns the halved shape and both channels.
pub(crate) fn analyze_axis(
    shape: &[usize],
    data: &[f64],
    axis: usize,
    bank: &FilterBank,
) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
    let n = shape[axis];
    if n < 2 {
        return Err(Error::SignalTooShort(n));
    }
    let h = n.div_ceil(2);
    let mut out_shape = shape.to_vec();
    out_shape[axis] = h;
    let Lanes { outer, inner } = lanes(shape, axis);
    let mut lo = vec![0.0; outer * h * inner];
    let mut hi = vec![0.0; outer * h * inner];
    let mut lane = vec![0.0; n];
    let mut a = vec![0.0; h];
    let mut d = vec![0.0; h];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * n * inner + j;
            for (i, v) in lane.iter_mut().enumerate() {
                *v = data[base + i * inner];
            }
            analyze_lane(&lane, &bank.analysis_lo, &mut a);
            analyze_lane(&lane, &bank.analysis_hi, &mut d);
            let ob = o * h * inner + j;
            for k in 0..h {
                lo[ob + k * inner] = a[k];
                hi[ob + k * inner] = d[k];
            }
        }
    }
    Ok((out_shape, lo, hi))
}

/// Synthesis along one axis from coefficient blocks restricted to
/// `coeff_idx` on that axis, producing samples `out_idx` of a signal whose
/// padded length is `m`. The full inverse is the special case
/// `coeff_idx = 0..m/2`, `out_idx = 0..original_len`.
pub(crate) fn synthesize_axis(
    coeff_shape: &[usize],
    lo: &[f64],
    hi: &[f64],
    axis: usize,
    bank: &FilterBank,
    m: usize,
    coeff_idx: &[usize],
    out_idx: &[usize],
) -> (Vec<usize>, Vec<f64>) {
    let kc = coeff_shape[axis];
    debug_assert_eq!(kc, coeff_idx.len());
    let mut lookup = vec![usize::MAX; m / 2];
    for (pos, &k) in coeff_idx.iter().enumerate() {
        lookup[k] = pos;
    }
    let n_out = out_idx.len();
    let mut out_shape = coeff_shape.to_vec();
    out_shape[axis] = n_out;
    let Lanes { outer, inner } = lanes(coeff_shape, axis);
    let mut out = vec![0.0; outer * n_out * inner];
    let mut la = vec![0.0; kc];
    let mut ld = vec![0.0; kc];
    let mut y = vec![0.0; n_out];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * kc * inner + j;
            for k in 0..kc {
                la[k] = lo[base + k * inner];
                ld[k] = hi[base + k * inner];
            }
            synthesize_lane(&la, &ld, bank, m, &lookup, out_idx, &mut y);
            let ob = o * n_out * inner + j;
            for (i, &v) in y.iter().enumerate() {
                out[ob + i * inner] = v;
            }
        }
    }
    (out_shape, out)
}

/// Coefficient positions (sorted, deduplicated) that synthesis reads when
/// producing samples `out_idx` of a signal with padded length `m`.
pub(crate) fn support_for(out_idx: &[usize], m: usize, bank: &FilterBank) -> Vec<usize> {
    let mut needed = vec![false; m / 2];
    for &i in out_idx {
        for taps in [&bank.synthesis_lo, &bank.synthesis_hi] {
            for t in 0..taps.len() {
                let r = (i as isize - taps.start - t as isize).rem_euclid(m as isize);
                if r & 1 == 0 {
                    needed[(r / 2) as usize] = true;
                }
            }
        }
    }
    needed
        .iter()
        .enumerate()
        .filter_map(|(k, &b)| b.then_some(k))
        .collect()
}
