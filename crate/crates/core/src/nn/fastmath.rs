//! Branch-light `sin`/`cos` for activation slices.
//!
//! Cody-Waite reduction by π/2 (33-bit head, so `k·PIO2_HI` is exact for
//! |k| < 2^20) followed by the fdlibm minimax kernels on [-π/4, π/4].
//! Absolute error stays below 1e-15 for |x| < 1e5; larger or non-finite
//! arguments fall back to `f64::sin_cos`. Only IEEE add/mul are used, so
//! results are identical on every platform.

const TWO_OVER_PI: f64 = std::f64::consts::FRAC_2_PI;
const PIO2_HI: f64 = 1.570_796_326_734_125_6;
const PIO2_LO: f64 = 6.077_100_506_506_192e-11;

const S1: f64 = -1.666_666_666_666_663_2e-1;
const S2: f64 = 8.333_333_333_322_49e-3;
const S3: f64 = -1.984_126_982_985_795e-4;
const S4: f64 = 2.755_731_370_707_006_8e-6;
const S5: f64 = -2.505_076_025_340_686_3e-8;
const S6: f64 = 1.589_690_995_211_55e-10;

const C1: f64 = 4.166_666_666_666_66e-2;
const C2: f64 = -1.388_888_888_887_411e-3;
const C3: f64 = 2.480_158_728_947_673e-5;
const C4: f64 = -2.755_731_435_139_066_3e-7;
const C5: f64 = 2.087_572_321_298_175e-9;
const C6: f64 = -1.135_964_755_778_819_5e-11;

const LIMIT: f64 = 1e5;

// Adding 1.5·2^52 rounds to the nearest integer (ties to even) and leaves
// that integer in the low mantissa bits, for |v| < 2^51.
const ROUNDER: f64 = 6_755_399_441_055_744.0;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    let t = x * TWO_OVER_PI + ROUNDER;
    let q = t.to_bits();
    let k = t - ROUNDER;
    let r = (x - k * PIO2_HI) - k * PIO2_LO;
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let c = 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));
    // quadrant select with bit masks so the loop stays vectorizable
    let swap = 0u64.wrapping_sub(q & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let sin_bits = (sb & !swap) | (cb & swap);
    let cos_bits = (cb & !swap) | (sb & swap);
    let sin_sign = (q & 2) << 62;
    let cos_sign = (q.wrapping_add(1) & 2) << 62;
    (f64::from_bits(sin_bits ^ sin_sign), f64::from_bits(cos_bits ^ cos_sign))
}

#[inline]
pub fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() < LIMIT {
        kernel(x)
    } else {
        x.sin_cos()
    }
}

fn all_small(xs: &[f64]) -> bool {
    // NaN fails the comparison, so it also takes the slow path
    xs.iter().fold(true, |ok, x| ok & (x.abs() < LIMIT))
}

/// `sin(x)` for every entry, with `cos(x)` written to `cos_out` when given.
pub fn sin_cos_slice(xs: &mut [f64], cos_out: Option<&mut [f64]>) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { sin_cos_slice_avx2(xs, cos_out) };
        return;
    }
    sin_cos_slice_generic(xs, cos_out);
}

// Wider registers only; no contraction happens, so results match the
// generic path bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sin_cos_slice_avx2(xs: &mut [f64], cos_out: Option<&mut [f64]>) {
    sin_cos_slice_generic(xs, cos_out);
}

#[inline(always)]
fn sin_cos_slice_generic(xs: &mut [f64], mut cos_out: Option<&mut [f64]>) {
    let fast = all_small(xs);
    match cos_out.as_deref_mut() {
        Some(c) if fast => {
            for (x, c) in xs.iter_mut().zip(c.iter_mut()) {
                let (s, co) = kernel(*x);
                *x = s;
                *c = co;
            }
        }
        Some(c) => {
            for (x, c) in xs.iter_mut().zip(c.iter_mut()) {
                let (s, co) = sin_cos(*x);
                *x = s;
                *c = co;
            }
        }
        None if fast => {
            for x in xs.iter_mut() {
                *x = kernel(*x).0;
            }
        }
        None => {
            for x in xs.iter_mut() {
                *x = sin_cos(*x).0;
            }
        }
    }
}
