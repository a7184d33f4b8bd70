use half::f16;

use super::mlp::{gemm, MlpNet, NetDims};
use crate::error::{Error, Result};

/// Largest finite binary16 magnitude.
pub const F16_MAX: f64 = 65504.0;

/// Network weights rounded to IEEE 754 binary16 (round to nearest, ties to
/// even), in the flat parameter order of [`MlpNet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedWeights {
    pub dims: NetDims,
    pub bits: Vec<u16>,
}

impl QuantizedWeights {
    pub fn byte_len(&self) -> usize {
        self.bits.len() * 2
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.bits.iter().flat_map(|b| b.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(dims: NetDims, bytes: &[u8]) -> Result<Self> {
        let expected = dims
            .checked_parameter_count()
            .ok_or_else(|| Error::InvalidNetwork("parameter count overflows".into()))?;
        if bytes.len() != expected * 2 {
            return Err(Error::Truncation {
                what: "weight payload".into(),
                expected: expected as u64 * 2,
                actual: bytes.len() as u64,
            });
        }
        let bits = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self { dims, bits })
    }
}

pub fn quantize_f16(net: &MlpNet) -> Result<QuantizedWeights> {
    let mut bits = Vec::with_capacity(net.parameter_count());
    for &w in net.params() {
        if !w.is_finite() {
            return Err(Error::NonFinite(w));
        }
        if w.abs() > F16_MAX {
            return Err(Error::QuantizationOverflow(w));
        }
        bits.push(f16::from_f64(w).to_bits());
    }
    Ok(QuantizedWeights {
        dims: net.dims().clone(),
        bits,
    })
}

pub fn dequantize_f16(q: &QuantizedWeights, omega0: f64, omega_hidden: f64) -> Result<MlpNet> {
    let params: Vec<f64> = q.bits.iter().map(|&b| f16::from_bits(b).to_f64()).collect();
    if let Some(&bad) = params.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    MlpNet::from_params(q.dims.clone(), omega0, omega_hidden, params)
}

/// The network as the decoder will see it after a binary16 round trip.
pub fn quantize_roundtrip(net: &MlpNet) -> Result<MlpNet> {
    dequantize_f16(&quantize_f16(net)?, net.omega0(), net.omega_hidden())
}

/// Points used to fit rounded layers; larger sets are strided down.
const FIT_POINTS: usize = 16384;

/// Binary16 rounding that keeps the network's outputs on `points` close to
/// the full-precision ones.
///
/// Layers are rounded first to last. Each layer is refit by least squares so
/// that, fed the activations of the already rounded layers, it reproduces the
/// full-precision pre-activations; its inputs are then rounded one at a time
/// while the inputs not yet rounded absorb the error through the inverse Gram
/// factor. The plain rounding is returned whenever it fits `points` at least
/// as well.
pub fn quantize_f16_compensated(net: &MlpNet, points: &[f64]) -> Result<QuantizedWeights> {
    let plain = quantize_f16(net)?;
    let p = net.dims().input;
    let n_all = points.len() / p.max(1);
    if points.len() % p != 0 || n_all == 0 {
        return Ok(plain);
    }
    let stride = n_all.div_ceil(FIT_POINTS);
    let pts: Vec<f64> = points.chunks(p).step_by(stride).flatten().copied().collect();
    let n = pts.len() / p;

    let shapes = net.dims().layer_shapes();
    let mut rounded = net.clone();
    let (mut x_master, mut x_rounded) = (pts.clone(), pts.clone());
    let mut offset = 0;
    for (l, &(out, inp)) in shapes.iter().enumerate() {
        let z_master = net.affine(&x_master, n, out, inp, offset);
        let layer = fit_layer(&x_rounded, &z_master, n, inp, out);
        let params = rounded.params_mut();
        match layer {
            Some(w) => params[offset..offset + out * inp + out].copy_from_slice(&w),
            None => {
                for v in &mut params[offset..offset + out * inp + out] {
                    *v = f16::from_f64(*v).to_f64();
                }
            }
        }
        if l + 1 < shapes.len() {
            let mut z = rounded.affine(&x_rounded, n, out, inp, offset);
            let w = net.omega_for(l);
            let mut zm = z_master;
            for v in z.iter_mut().chain(zm.iter_mut()) {
                *v = (*v * w).sin();
            }
            x_rounded = z;
            x_master = zm;
        }
        offset += out * inp + out;
    }
    let candidate = quantize_f16(&rounded)?;
    let target = net.forward(&pts)?;
    let fit = |q: &QuantizedWeights| -> Result<f64> {
        let y = dequantize_f16(q, net.omega0(), net.omega_hidden())?.forward(&pts)?;
        Ok(y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum())
    };
    Ok(if fit(&candidate)? < fit(&plain)? { candidate } else { plain })
}

/// Binary16 weights `W` (row-major `out × inp`) followed by bias `b` with
/// `x · Wᵀ + b ≈ z`, or `None` when the system is degenerate or a value
/// leaves the binary16 range.
fn fit_layer(x: &[f64], z: &[f64], n: usize, inp: usize, out: usize) -> Option<Vec<f64>> {
    let d = inp + 1;
    let mut aug = Vec::with_capacity(n * d);
    for row in x.chunks(inp) {
        aug.extend_from_slice(row);
        aug.push(1.0);
    }
    let mut gram = vec![0.0; d * d];
    gemm(d, n, d, &aug, (1, d as isize), &aug, (d as isize, 1), 0.0, &mut gram, d as isize);
    let mut cross = vec![0.0; d * out];
    gemm(d, n, out, &aug, (1, d as isize), z, (out as isize, 1), 0.0, &mut cross, out as isize);
    let mean_diag = (0..d).map(|a| gram[a * d + a]).sum::<f64>() / d as f64;
    if !(mean_diag > 0.0) {
        return None;
    }
    for a in 0..d {
        gram[a * d + a] += 1e-8 * mean_diag;
    }
    let chol = cholesky(&gram, d)?;
    // U with inverse Gram = UᵀU, U[a][b] = factor[b][a]
    let mut inv = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for c in 0..d {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let col = cho_solve(&chol, d, &e);
        for a in 0..d {
            inv[a * d + c] = col[a];
        }
    }
    let factor = cholesky(&inv, d)?;
    let upper = |a: usize, b: usize| factor[b * d + a];

    let mut layer = vec![0.0; out * inp + out];
    for r in 0..out {
        let rhs: Vec<f64> = (0..d).map(|a| cross[a * out + r]).collect();
        let mut w = cho_solve(&chol, d, &rhs);
        for j in 0..d {
            if !w[j].is_finite() || w[j].abs() > F16_MAX {
                return None;
            }
            let q = f16::from_f64(w[j]).to_f64();
            let err = (w[j] - q) / upper(j, j);
            for k in j + 1..d {
                w[k] -= err * upper(j, k);
            }
            let slot = if j < inp { r * inp + j } else { out * inp + r };
            layer[slot] = q;
        }
    }
    Some(layer)
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if !(s > 0.0) {
            return None;
        }
        let djj = s.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Some(l)
}

fn cho_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::siren_init;

    fn single(w: f64) -> Result<f64> {
        let net = MlpNet::from_params(NetDims::new(1, vec![], 1), 30.0, 30.0, vec![w, 0.0]).unwrap();
        Ok(quantize_roundtrip(&net)?.params()[0])
    }

    #[test]
    fn examples() {
        assert_eq!(single(1.0).unwrap(), 1.0);
        let r = single(0.1).unwrap();
        assert!((r - 0.1).abs() <= 0.1 * 2f64.powi(-11));
        assert!(matches!(single(1e6), Err(Error::QuantizationOverflow(_))));
        assert!(matches!(single(f64::NAN), Err(Error::NonFinite(_))));
        assert_eq!(single(65504.0).unwrap(), 65504.0);
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-11 lies halfway between 1 and 1 + 2^-10.
        assert_eq!(single(1.0 + 2f64.powi(-11)).unwrap(), 1.0);
        assert_eq!(single(1.0 + 3.0 * 2f64.powi(-11)).unwrap(), 1.0 + 2.0 * 2f64.powi(-10));
    }

    #[test]
    fn relative_bound_on_random_net() {
        let net = siren_init(&NetDims::uniform(2, 32, 3, 3), 30.0, 30.0, 7).unwrap();
        let back = quantize_roundtrip(&net).unwrap();
        for (a, b) in net.params().iter().zip(back.params()) {
            // normal binary16 range starts at 2^-14
            if a.abs() >= 2f64.powi(-14) {
                assert!((a - b).abs() <= a.abs() * 2f64.powi(-11));
            } else {
                assert!((a - b).abs() <= 2f64.powi(-25));
            }
        }
    }

    #[test]
    fn compensated_rounding_fits_at_least_as_well() {
        let net = siren_init(&NetDims::uniform(2, 24, 3, 2), 30.0, 30.0, 11).unwrap();
        let pts: Vec<f64> = (0..400).flat_map(|i| [(i % 20) as f64 / 10.0 - 1.0, (i / 20) as f64 / 10.0 - 1.0]).collect();
        let target = net.forward(&pts).unwrap();
        let sse = |q: &QuantizedWeights| {
            let y = dequantize_f16(q, 30.0, 30.0).unwrap().forward(&pts).unwrap();
            y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let plain = quantize_f16(&net).unwrap();
        let comp = quantize_f16_compensated(&net, &pts).unwrap();
        assert!(sse(&comp) <= sse(&plain));
        for (&b, &w) in comp.bits.iter().zip(net.params()) {
            assert!(f16::from_bits(b).to_f64().is_finite() && (f16::from_bits(b).to_f64() - w).abs() < 1.0);
        }
    }

    #[test]
    fn byte_roundtrip_and_truncation() {
        let net = siren_init(&NetDims::uniform(2, 4, 1, 1), 30.0, 30.0, 2).unwrap();
        let q = quantize_f16(&net).unwrap();
        let bytes = q.to_le_bytes();
        assert_eq!(QuantizedWeights::from_le_bytes(q.dims.clone(), &bytes).unwrap(), q);
        assert!(matches!(
            QuantizedWeights::from_le_bytes(q.dims.clone(), &bytes[..bytes.len() - 2]),
            Err(Error::Truncation { .. })
        ));
    }
}
