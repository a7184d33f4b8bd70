use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::fastmath::sin_cos_slice;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Layer widths of a fully connected network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl NetDims {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Self { input, hidden, output }
    }

    /// Three hidden layers of equal width.
    pub fn uniform(input: usize, width: usize, depth: usize, output: usize) -> Self {
        Self::new(input, vec![width; depth], output)
    }

    /// `(out, in)` of every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output)) {
            shapes.push((w, prev));
            prev = w;
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Parameter count with overflow reported instead of wrapping.
    pub fn checked_parameter_count(&self) -> Option<usize> {
        let mut total: usize = 0;
        for (o, i) in self.layer_shapes() {
            total = total.checked_add(o.checked_mul(i)?.checked_add(o)?)?;
        }
        Some(total)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::InvalidNetwork(format!("zero-width layer in {self:?}")));
        }
        Ok(())
    }
}

/// Rows per block in [`MlpNet::forward`], bounding activation memory.
const FORWARD_CHUNK: usize = 8192;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Sine-activated MLP: hidden layer `k` computes `sin(ω (W_k h + b_k))` with
/// `ω = omega0` for the first layer and `omega_hidden` after it; the final
/// layer is affine.
///
/// Parameters live in one flat vector, layer by layer, each layer as its
/// row-major `out × in` weight followed by its bias.
#[derive(Clone, Debug)]
pub struct MlpNet {
    dims: NetDims,
    omega0: f64,
    omega_hidden: f64,
    params: Vec<f64>,
    version: u64,
}

impl PartialEq for MlpNet {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.omega0 == other.omega0
            && self.omega_hidden == other.omega_hidden
            && self.params == other.params
    }
}

fn check_omegas(omega0: f64, omega_hidden: f64) -> Result<()> {
    if !(omega0 > 0.0 && omega0.is_finite() && omega_hidden > 0.0 && omega_hidden.is_finite()) {
        return Err(Error::InvalidNetwork(format!(
            "frequencies must be positive, got ω0={omega0} ω_h={omega_hidden}"
        )));
    }
    Ok(())
}

/// SIREN initialization: first-layer weights `U(-1/p, 1/p)`, later weights
/// `U(-√(6/fan_in)/ω_h, √(6/fan_in)/ω_h)`, biases `U(-1/√fan_in, 1/√fan_in)`.
pub fn siren_init(dims: &NetDims, omega0: f64, omega_hidden: f64, seed: u64) -> Result<MlpNet> {
    dims.validate()?;
    check_omegas(omega0, omega_hidden)?;
    let mut rng = Stream::new(seed);
    let mut params = Vec::with_capacity(dims.parameter_count());
    for (k, (out, fan_in)) in dims.layer_shapes().into_iter().enumerate() {
        let w_bound = if k == 0 {
            1.0 / fan_in as f64
        } else {
            (6.0 / fan_in as f64).sqrt() / omega_hidden
        };
        for _ in 0..out * fan_in {
            params.push(rng.uniform_in(-w_bound, w_bound));
        }
        let b_bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..out {
            params.push(rng.uniform_in(-b_bound, b_bound));
        }
    }
    MlpNet::from_params(dims.clone(), omega0, omega_hidden, params)
}

/// Intermediates of one forward pass, consumed by [`MlpNet::backward`].
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    /// Input of every layer (`acts[0]` is the point batch).
    acts: Vec<Vec<f64>>,
    /// `ω cos(ω z)` of every hidden layer.
    dact: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// `c (m×n) = a (m×k) · b (k×n)` with explicit strides; `beta` scales `c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: every index touched is within the slices given the strides above,
    // which callers derive from the same dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

impl MlpNet {
    pub fn from_params(dims: NetDims, omega0: f64, omega_hidden: f64, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        check_omegas(omega0, omega_hidden)?;
        if params.len() != dims.parameter_count() {
            return Err(Error::InvalidNetwork(format!(
                "{} parameters given, {:?} needs {}",
                params.len(),
                dims,
                dims.parameter_count()
            )));
        }
        Ok(Self {
            dims,
            omega0,
            omega_hidden,
            params,
            version: fresh_version(),
        })
    }

    pub fn zeros(dims: &NetDims, omega0: f64, omega_hidden: f64) -> Result<Self> {
        Self::from_params(dims.clone(), omega0, omega_hidden, vec![0.0; dims.parameter_count()])
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn omega_hidden(&self) -> f64 {
        self.omega_hidden
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    /// Offsets of `(weight, bias)` of layer `k` within the flat parameters.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let shapes = self.dims.layer_shapes();
        let start: usize = shapes[..layer].iter().map(|(o, i)| o * i + o).sum();
        let (o, i) = shapes[layer];
        (start, start + o * i)
    }

    pub(crate) fn omega_for(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega0
        } else {
            self.omega_hidden
        }
    }

    fn check_points(&self, points: &[f64]) -> Result<usize> {
        let p = self.dims.input;
        if points.len() % p != 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![p],
                actual: vec![points.len()],
            });
        }
        Ok(points.len() / p)
    }

    /// The same function with every sine-layer bias wrapped into
    /// `[-π/2ω, π/2ω]`: a shift by `π/ω` flips the neuron's sign, which the
    /// next layer's weight column absorbs. Small biases round far more
    /// accurately to binary16.
    pub fn with_wrapped_phases(&self) -> MlpNet {
        let mut out = self.clone();
        let shapes = self.dims.layer_shapes();
        for l in 0..shapes.len() - 1 {
            let half = std::f64::consts::PI / self.omega_for(l);
            let (_, b_off) = self.layer_offsets(l);
            let (next_w, _) = self.layer_offsets(l + 1);
            let (next_out, next_in) = shapes[l + 1];
            for j in 0..shapes[l].0 {
                let b = out.params[b_off + j];
                let k = (b / half).round();
                if k == 0.0 {
                    continue;
                }
                out.params[b_off + j] = b - k * half;
                if k.rem_euclid(2.0) == 1.0 {
                    for r in 0..next_out {
                        let w = &mut out.params[next_w + r * next_in + j];
                        *w = -*w;
                    }
                }
            }
        }
        out.version = fresh_version();
        out
    }

    /// Evaluates a row-major `n × input` batch; returns `n × output`.
    pub fn forward(&self, points: &[f64]) -> Result<Vec<f64>> {
        let n = self.check_points(points)?;
        if n <= FORWARD_CHUNK {
            return Ok(self.forward_block(points, n));
        }
        let mut out = Vec::with_capacity(n * self.dims.output);
        for block in points.chunks(FORWARD_CHUNK * self.dims.input) {
            out.extend(self.forward_block(block, block.len() / self.dims.input));
        }
        Ok(out)
    }

    fn forward_block(&self, points: &[f64], n: usize) -> Vec<f64> {
        let shapes = self.dims.layer_shapes();
        let mut act = points.to_vec();
        let mut offset = 0;
        for (k, &(out, inp)) in shapes.iter().enumerate() {
            let z = self.affine(&act, n, out, inp, offset);
            offset += out * inp + out;
            act = z;
            if k + 1 < shapes.len() {
                let w = self.omega_for(k);
                act.iter_mut().for_each(|v| *v *= w);
                sin_cos_slice(&mut act, None);
            }
        }
        act
    }

    /// `act · Wᵀ + b` for the layer whose parameters start at `offset`.
    pub(crate) fn affine(&self, act: &[f64], n: usize, out: usize, inp: usize, offset: usize) -> Vec<f64> {
        let weight = &self.params[offset..offset + out * inp];
        let bias = &self.params[offset + out * inp..offset + out * inp + out];
        let mut z = vec![0.0; n * out];
        for row in z.chunks_mut(out) {
            row.copy_from_slice(bias);
        }
        gemm(
            n,
            inp,
            out,
            act,
            (inp as isize, 1),
            weight,
            (1, inp as isize),
            1.0,
            &mut z,
            out as isize,
        );
        z
    }

    /// Forward pass that records what [`MlpNet::backward`] needs.
    pub fn forward_cached(&self, points: &[f64], cache: &mut ForwardCache) -> Result<()> {
        let n = self.check_points(points)?;
        let shapes = self.dims.layer_shapes();
        cache.version = self.version;
        cache.batch = n;
        cache.acts.clear();
        cache.dact.clear();
        cache.acts.push(points.to_vec());
        let mut offset = 0;
        for (k, &(out, inp)) in shapes.iter().enumerate() {
            let mut z = self.affine(cache.acts.last().expect("input"), n, out, inp, offset);
            offset += out * inp + out;
            if k + 1 < shapes.len() {
                let w = self.omega_for(k);
                z.iter_mut().for_each(|v| *v *= w);
                let mut c = vec![0.0; z.len()];
                sin_cos_slice(&mut z, Some(&mut c));
                c.iter_mut().for_each(|v| *v *= w);
                cache.dact.push(c);
                cache.acts.push(z);
            } else {
                cache.output = z;
            }
        }
        Ok(())
    }

    /// Exact parameter gradient of `Σ grad_out ⊙ output` for the cached batch.
    /// `grads` is overwritten and must have `parameter_count()` entries.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if cache.version != self.version || cache.acts.is_empty() {
            return Err(Error::StaleCache(
                "parameters changed since the forward pass".into(),
            ));
        }
        let n = cache.batch;
        if grad_out.len() != n * self.dims.output {
            return Err(Error::StaleCache(format!(
                "output gradient has {} entries, cached batch needs {}",
                grad_out.len(),
                n * self.dims.output
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.params.len()],
                actual: vec![grads.len()],
            });
        }
        let shapes = self.dims.layer_shapes();
        let mut delta = grad_out.to_vec();
        let mut offset_end = self.params.len();
        for k in (0..shapes.len()).rev() {
            let (out, inp) = shapes[k];
            let w_off = offset_end - (out * inp + out);
            let b_off = w_off + out * inp;
            let input = &cache.acts[k];
            // dW = δᵀ · A
            gemm(
                out,
                n,
                inp,
                &delta,
                (1, out as isize),
                input,
                (inp as isize, 1),
                0.0,
                &mut grads[w_off..b_off],
                inp as isize,
            );
            let gb = &mut grads[b_off..b_off + out];
            gb.fill(0.0);
            for row in delta.chunks(out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if k > 0 {
                // δ_prev = (δ · W) ⊙ ω cos(ω z)
                let mut prev = vec![0.0; n * inp];
                gemm(
                    n,
                    out,
                    inp,
                    &delta,
                    (out as isize, 1),
                    &self.params[w_off..b_off],
                    (inp as isize, 1),
                    0.0,
                    &mut prev,
                    inp as isize,
                );
                for (v, d) in prev.iter_mut().zip(&cache.dact[k - 1]) {
                    *v *= d;
                }
                delta = prev;
            }
            offset_end = w_off;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_example() {
        let dims = NetDims::new(2, vec![64, 64, 64], 3);
        let want = 2 * 64 + 64 + 2 * (64 * 64 + 64) + 64 * 3 + 3;
        assert_eq!(dims.parameter_count(), want);
        let net = siren_init(&dims, 30.0, 30.0, 1).unwrap();
        assert_eq!(net.parameter_count(), want);
    }

    #[test]
    fn init_is_deterministic() {
        let dims = NetDims::uniform(3, 16, 3, 2);
        let a = siren_init(&dims, 30.0, 30.0, 99).unwrap();
        let b = siren_init(&dims, 30.0, 30.0, 99).unwrap();
        assert_eq!(a.params(), b.params());
        let c = siren_init(&dims, 30.0, 30.0, 100).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn init_ranges() {
        let dims = NetDims::new(2, vec![100, 100], 1);
        let net = siren_init(&dims, 30.0, 30.0, 5).unwrap();
        let (w0, b0) = net.layer_offsets(0);
        assert!(net.params()[w0..b0].iter().all(|v| v.abs() <= 0.5));
        let (w1, b1) = net.layer_offsets(1);
        let layer2 = &net.params()[w1..b1];
        assert_eq!(layer2.len(), 10_000);
        let bound = (6.0f64 / 100.0).sqrt() / 30.0;
        let max = layer2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= bound);
        // uniform on [-b, b]: extremes approach the bound, variance b²/3
        assert!(max > 0.99 * bound);
        let var = layer2.iter().map(|v| v * v).sum::<f64>() / layer2.len() as f64;
        assert!((var / (bound * bound / 3.0) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&NetDims::uniform(2, 8, 3, 2), 30.0, 30.0).unwrap();
        let out = net.forward(&[0.3, -0.7, 1.0, 1.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_identity_net() {
        let dims = NetDims::new(3, vec![], 3);
        let mut params = vec![0.0; 12];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let net = MlpNet::from_params(dims, 30.0, 30.0, params).unwrap();
        let x = [0.1, -0.2, 0.9, 0.5, 0.25, -1.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn batched_matches_single() {
        let net = siren_init(&NetDims::uniform(2, 24, 3, 3), 30.0, 30.0, 3).unwrap();
        let mut rng = Stream::new(4);
        let pts: Vec<f64> = (0..2 * 57).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let batched = net.forward(&pts).unwrap();
        for (i, p) in pts.chunks(2).enumerate() {
            let single = net.forward(p).unwrap();
            for c in 0..3 {
                assert!((single[c] - batched[i * 3 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let net = siren_init(&NetDims::uniform(2, 4, 1, 1), 30.0, 30.0, 3).unwrap();
        assert!(net.forward(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = siren_init(&NetDims::uniform(2, 4, 2, 1), 30.0, 30.0, 3).unwrap();
        let mut cache = ForwardCache::default();
        let mut g = vec![0.0; net.parameter_count()];
        assert!(matches!(net.backward(&cache, &[1.0], &mut g), Err(Error::StaleCache(_))));
        net.forward_cached(&[0.1, 0.2], &mut cache).unwrap();
        net.backward(&cache, &[1.0], &mut g).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0], &mut g), Err(Error::StaleCache(_))));
    }

    #[test]
    fn wrapped_phases_keep_the_function() {
        let mut net = siren_init(&NetDims::uniform(2, 12, 3, 2), 30.0, 20.0, 4).unwrap();
        for v in net.params_mut() {
            *v *= 3.0;
        }
        let wrapped = net.with_wrapped_phases();
        let pts: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = (net.forward(&pts).unwrap(), wrapped.forward(&pts).unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9));
        for l in 0..3 {
            let (_, b_off) = wrapped.layer_offsets(l);
            let lim = std::f64::consts::FRAC_PI_2 / if l == 0 { 30.0 } else { 20.0 } + 1e-12;
            assert!(wrapped.params()[b_off..b_off + 12].iter().all(|v| v.abs() <= lim));
        }
    }

    #[test]
    fn zero_loss_gradient() {
        let net = siren_init(&NetDims::uniform(2, 8, 2, 2), 30.0, 30.0, 8).unwrap();
        let mut cache = ForwardCache::default();
        net.forward_cached(&[0.1, 0.2, -0.4, 0.9], &mut cache).unwrap();
        let mut g = vec![1.0; net.parameter_count()];
        net.backward(&cache, &[0.0; 4], &mut g).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_outputs_bounded() {
        // |hidden| ≤ 1 bounds the output by Σ|W_last| + |b_last| per channel.
        let net = siren_init(&NetDims::uniform(2, 16, 3, 2), 30.0, 30.0, 12).unwrap();
        let (w, b) = net.layer_offsets(3);
        let last_w = &net.params()[w..b];
        let last_b = &net.params()[b..];
        let mut rng = Stream::new(1);
        let pts: Vec<f64> = (0..400).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let out = net.forward(&pts).unwrap();
        for row in out.chunks(2) {
            for c in 0..2 {
                let bound: f64 = last_w[c * 16..(c + 1) * 16].iter().map(|v| v.abs()).sum::<f64>()
                    + last_b[c].abs();
                assert!(row[c].abs() <= bound + 1e-12);
            }
        }
    }
}
