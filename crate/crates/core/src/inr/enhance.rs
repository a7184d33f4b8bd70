use super::subnet::{upsample_eval, NetSpec, ScaleSubnet};
use super::train::{batch_loss_grad, fit, DirectFit, Loss, Objective, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::MlpNet;
use crate::tensor::{make_grid, strides, NdTensor};

/// Odd window side lengths accepted by the encoder.
pub const WINDOWS: [usize; 3] = [3, 5, 9];

/// Largest kernel for which the warm start solves the full least-squares
/// problem; bigger windows start from a scaled delta kernel.
const LSQ_MAX_KERNEL: usize = 125;

/// Predicts, at every fine-grid coordinate, one `window^p` kernel per
/// orientation. Output channel `o * window^p + k` is entry `k` (row-major
/// window order) of the kernel for orientation `o + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementPredictor {
    pub net: MlpNet,
    pub window: usize,
    /// Scale of the frozen subnet whose prediction is refined.
    pub source_scale: usize,
    pub target_scale: usize,
    pub orientations: usize,
}

pub(crate) fn check_window(window: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::InvalidConfig(format!("window side must be odd, got {window}")));
    }
    Ok(())
}

pub fn kernel_len(window: usize, p: usize) -> usize {
    window.pow(p as u32)
}

impl EnhancementPredictor {
    pub fn kernel_len(&self) -> usize {
        kernel_len(self.window, self.net.dims().input)
    }

    pub fn validate(&self) -> Result<()> {
        check_window(self.window)?;
        if self.net.dims().output != self.orientations * self.kernel_len() {
            return Err(Error::InvalidNetwork(format!(
                "predictor emits {} values, {} orientations of {}-entry kernels need {}",
                self.net.dims().output,
                self.orientations,
                self.kernel_len(),
                self.orientations * self.kernel_len()
            )));
        }
        Ok(())
    }
}

/// Edge-clamped window gatherer over a fixed grid shape.
pub(crate) struct Patcher {
    shape: Vec<usize>,
    strides: Vec<usize>,
    window: usize,
}

impl Patcher {
    pub(crate) fn new(shape: &[usize], window: usize) -> Result<Self> {
        check_window(window)?;
        Ok(Self {
            shape: shape.to_vec(),
            strides: strides(shape),
            window,
        })
    }

    fn len(&self) -> usize {
        kernel_len(self.window, self.shape.len())
    }

    /// Flat positions of the window around `center`, row-major over the
    /// window. `axis` is scratch space.
    pub(crate) fn offsets(&self, center: usize, axis: &mut Vec<usize>, out: &mut Vec<usize>) {
        let r = (self.window / 2) as isize;
        let (p, w) = (self.shape.len(), self.window);
        axis.clear();
        let mut rem = center;
        for k in 0..p {
            let c = (rem / self.strides[k]) as isize;
            rem %= self.strides[k];
            let hi = self.shape[k] as isize - 1;
            axis.extend((0..w).map(|o| (c + o as isize - r).clamp(0, hi) as usize * self.strides[k]));
        }
        out.clear();
        out.push(0);
        for k in 0..p {
            let prev = std::mem::take(out);
            for base in prev {
                out.extend(axis[k * w..(k + 1) * w].iter().map(|o| base + o));
            }
        }
    }
}

/// The `window^p` neighborhood of `center`, row-major, with out-of-range
/// samples replaced by the nearest edge sample.
pub fn extract_patch(field: &NdTensor, center: &[usize], window: usize) -> Result<Vec<f64>> {
    let flat = field.flat_index(center)?;
    let patcher = Patcher::new(field.shape(), window)?;
    let (mut axis, mut offsets) = (Vec::new(), Vec::new());
    patcher.offsets(flat, &mut axis, &mut offsets);
    Ok(offsets.iter().map(|&o| field.data()[o]).collect())
}

/// Inner products of predicted kernels with coarse-field patches at the
/// fine-grid positions `idx`: row-major `idx.len() × orientations`.
pub(crate) fn apply_kernels(kernels: &[f64], patches: &[f64], k: usize) -> Vec<f64> {
    kernels
        .chunks(k)
        .zip(patches.chunks(k))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect()
}

pub(crate) fn gather_patches(fields: &[&[f64]], patcher: &Patcher, idx: &[usize]) -> Vec<f64> {
    let k = patcher.len();
    let mut out = Vec::with_capacity(idx.len() * fields.len() * k);
    let (mut axis, mut offsets) = (Vec::new(), Vec::new());
    for &i in idx {
        patcher.offsets(i, &mut axis, &mut offsets);
        for f in fields {
            out.extend(offsets.iter().map(|&o| f[o]));
        }
    }
    out
}

/// Evaluates the predictor at fine-grid positions `idx` against coarse
/// `fields` already rasterized on the fine grid.
pub fn enhance_forward(pred: &EnhancementPredictor, fields: &[NdTensor], idx: &[usize]) -> Result<Vec<f64>> {
    pred.validate()?;
    let shape = fields
        .first()
        .ok_or_else(|| Error::InvalidShape("no coarse fields".into()))?
        .shape()
        .to_vec();
    if fields.len() != pred.orientations {
        return Err(Error::ShapeMismatch {
            expected: vec![pred.orientations],
            actual: vec![fields.len()],
        });
    }
    if let Some(f) = fields.iter().find(|f| f.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: f.shape().to_vec(),
        });
    }
    if shape.len() != pred.net.dims().input {
        return Err(Error::ShapeMismatch {
            expected: vec![pred.net.dims().input],
            actual: shape,
        });
    }
    let total: usize = shape.iter().product();
    if let Some(&bad) = idx.iter().find(|&&i| i >= total) {
        return Err(Error::IndexOutOfBounds {
            index: vec![bad],
            shape,
        });
    }
    let grid = make_grid(&shape)?;
    let mut points = Vec::with_capacity(idx.len() * shape.len());
    for &i in idx {
        points.extend(grid.coord(i));
    }
    let kernels = pred.net.forward(&points)?;
    let patcher = Patcher::new(&shape, pred.window)?;
    let views: Vec<&[f64]> = fields.iter().map(NdTensor::data).collect();
    let patches = gather_patches(&views, &patcher, idx);
    Ok(apply_kernels(&kernels, &patches, patcher.len()))
}

/// Loss of the predictor against `targets` (row-major `n × orientations`
/// over the whole fine grid of `fields`) and its parameter gradient.
pub fn enhancement_loss_grad(
    pred: &EnhancementPredictor,
    fields: &[NdTensor],
    targets: &[f64],
    loss: Loss,
) -> Result<(f64, Vec<f64>)> {
    let n = fields.first().map_or(0, NdTensor::len);
    let idx: Vec<usize> = (0..n).collect();
    // reuses the argument checks of the forward pass
    enhance_forward(pred, fields, &idx)?;
    if targets.len() != n * pred.orientations {
        return Err(Error::ShapeMismatch {
            expected: vec![n, pred.orientations],
            actual: vec![targets.len()],
        });
    }
    let shape = fields[0].shape();
    let obj = KernelFit {
        points: DirectFit {
            inputs: make_grid(shape)?.points(),
            targets: targets.to_vec(),
            input_dim: shape.len(),
            channels: pred.orientations,
        },
        fields: fields.iter().map(NdTensor::data).collect(),
        patcher: Patcher::new(shape, pred.window)?,
    };
    batch_loss_grad(&pred.net, &obj, &idx, loss)
}

/// Kernel regression: the net emits kernels, the loss sees their inner
/// products with fixed patches.
pub(crate) struct KernelFit<'a> {
    pub points: DirectFit,
    pub fields: Vec<&'a [f64]>,
    pub patcher: Patcher,
}

impl KernelFit<'_> {
    fn orientations(&self) -> usize {
        self.fields.len()
    }

    fn predict(&self, idx: &[usize], output: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let patches = gather_patches(&self.fields, &self.patcher, idx);
        let y = apply_kernels(output, &patches, self.patcher.len());
        (y, patches)
    }
}

impl Objective for KernelFit<'_> {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn input_dim(&self) -> usize {
        self.points.input_dim
    }

    fn gather_inputs(&self, idx: &[usize], out: &mut Vec<f64>) {
        self.points.gather_inputs(idx, out);
    }

    fn loss_grad(&self, idx: &[usize], output: &[f64], loss: Loss, grad: &mut [f64]) -> f64 {
        let (y, patches) = self.predict(idx, output);
        let mut dy = vec![0.0; y.len()];
        let value = self.points.loss_grad(idx, &y, loss, &mut dy);
        let k = self.patcher.len();
        for ((g, p), &d) in grad.chunks_mut(k).zip(patches.chunks(k)).zip(&dy) {
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi = d * pi;
            }
        }
        value
    }

    fn channel_sq_err(&self, idx: &[usize], output: &[f64]) -> Vec<f64> {
        let (y, _) = self.predict(idx, output);
        self.points.channel_sq_err(idx, &y)
    }
}

/// Least-squares constant kernel per orientation over (a subsample of) the
/// grid. Falls back to a scaled delta for large windows.
fn constant_kernels(obj: &KernelFit) -> Vec<Vec<f64>> {
    let n = obj.len();
    let k = obj.patcher.len();
    let o = obj.orientations();
    let step = n.div_ceil(16_384).max(1);
    let idx: Vec<usize> = (0..n).step_by(step).collect();
    let patches = gather_patches(&obj.fields, &obj.patcher, &idx);
    let targets = &obj.points.targets;
    (0..o)
        .map(|c| {
            let rows = idx.iter().enumerate().map(|(r, &i)| {
                let start = (r * o + c) * k;
                (&patches[start..start + k], targets[i * o + c])
            });
            if k <= LSQ_MAX_KERNEL {
                let mut gram = vec![0.0; k * k];
                let mut rhs = vec![0.0; k];
                for (p, t) in rows {
                    for a in 0..k {
                        rhs[a] += p[a] * t;
                        for b in 0..=a {
                            gram[a * k + b] += p[a] * p[b];
                        }
                    }
                }
                for a in 0..k {
                    for b in 0..a {
                        gram[b * k + a] = gram[a * k + b];
                    }
                }
                solve_spd(gram, rhs, k)
            } else {
                let mid = k / 2;
                let (mut pt, mut pp) = (0.0, 0.0);
                for (p, t) in rows {
                    pt += p[mid] * t;
                    pp += p[mid] * p[mid];
                }
                let mut kern = vec![0.0; k];
                kern[mid] = if pp > 0.0 { pt / pp } else { 0.0 };
                kern
            }
        })
        .collect()
}

/// Cholesky solve with a small ridge; a zero system yields the zero vector.
fn solve_spd(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    if trace <= 0.0 {
        return vec![0.0; n];
    }
    let ridge = 1e-10 * trace / n as f64;
    for i in 0..n {
        a[i * n + i] += ridge;
    }
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        let d = d.max(f64::MIN_POSITIVE).sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    b
}

/// Options of [`train_enhancement`].
#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceOptions {
    pub window: usize,
    /// Start from the best constant kernel: zero final weights, final bias
    /// set to the least-squares kernel.
    pub warm_start: bool,
}

/// Fits a predictor refining the frozen `coarse` subnet onto the grid of
/// `fine_bands` (scaled targets, one per orientation of `coarse`).
pub fn train_enhancement(
    spec: &NetSpec,
    coarse: &ScaleSubnet,
    fine_bands: &[&NdTensor],
    opts: &EnhanceOptions,
    cfg: &TrainConfig,
) -> Result<(EnhancementPredictor, TrainReport)> {
    check_window(opts.window)?;
    let first = fine_bands
        .first()
        .ok_or_else(|| Error::InvalidShape("no fine bands".into()))?;
    let shape = first.shape().to_vec();
    let o = coarse.bands.len();
    if fine_bands.len() != o {
        return Err(Error::ShapeMismatch {
            expected: vec![o],
            actual: vec![fine_bands.len()],
        });
    }
    if let Some(b) = fine_bands.iter().find(|b| b.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch {
            expected: shape,
            actual: b.shape().to_vec(),
        });
    }
    let k = kernel_len(opts.window, shape.len());
    if spec.dims.input != shape.len() || spec.dims.output != o * k {
        return Err(Error::InvalidNetwork(format!(
            "predictor for {o} orientations with {k}-entry kernels needs {}→{} dims, got {:?}",
            shape.len(),
            o * k,
            spec.dims
        )));
    }
    let grid = make_grid(&shape)?;
    let fields = upsample_eval(coarse, &grid)?;
    let mut targets = vec![0.0; grid.len() * o];
    for (c, b) in fine_bands.iter().enumerate() {
        for (i, &v) in b.data().iter().enumerate() {
            targets[i * o + c] = v;
        }
    }
    let obj = KernelFit {
        points: DirectFit {
            inputs: grid.points(),
            targets,
            input_dim: shape.len(),
            channels: o,
        },
        fields: fields.iter().map(NdTensor::data).collect(),
        patcher: Patcher::new(&shape, opts.window)?,
    };
    let mut net = spec.init(cfg.seed)?;
    if opts.warm_start {
        let kernels = constant_kernels(&obj);
        let last = net.dims().hidden.len();
        let (w_off, b_off) = net.layer_offsets(last);
        let params = net.params_mut();
        params[w_off..b_off].fill(0.0);
        for (c, kern) in kernels.iter().enumerate() {
            params[b_off + c * k..b_off + (c + 1) * k].copy_from_slice(kern);
        }
    }
    let report = fit(&mut net, &obj, cfg)?;
    Ok((
        EnhancementPredictor {
            net,
            window: opts.window,
            source_scale: coarse.scale,
            target_scale: coarse.scale - 1,
            orientations: o,
        },
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inr::subnet::BandRef;
    use crate::nn::{siren_init, NetDims};

    fn ramp(shape: &[usize]) -> NdTensor {
        NdTensor::from_fn(shape, |i| (i[0] * 10 + i[1]) as f64).unwrap()
    }

    #[test]
    fn interior_patch_copies_window() {
        let f = ramp(&[6, 6]);
        let p = extract_patch(&f, &[2, 3], 3).unwrap();
        assert_eq!(p, vec![12.0, 13.0, 14.0, 22.0, 23.0, 24.0, 32.0, 33.0, 34.0]);
    }

    #[test]
    fn corner_patch_is_clamped() {
        let f = ramp(&[4, 5]);
        let p = extract_patch(&f, &[0, 0], 3).unwrap();
        assert_eq!(p, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 10.0, 10.0, 11.0]);
        let p = extract_patch(&f, &[3, 4], 3).unwrap();
        assert_eq!(p, vec![23.0, 24.0, 24.0, 33.0, 34.0, 34.0, 33.0, 34.0, 34.0]);
    }

    #[test]
    fn unit_window_and_even_window() {
        let f = ramp(&[3, 3]);
        assert_eq!(extract_patch(&f, &[1, 2], 1).unwrap(), vec![12.0]);
        assert!(matches!(extract_patch(&f, &[1, 1], 4), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn patch_in_one_and_three_dims() {
        let line = NdTensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(extract_patch(&line, &[0], 5).unwrap(), vec![1.0, 1.0, 1.0, 2.0, 3.0]);
        let cube = NdTensor::from_fn(&[3, 3, 3], |i| (i[0] * 9 + i[1] * 3 + i[2]) as f64).unwrap();
        let p = extract_patch(&cube, &[1, 1, 1], 3).unwrap();
        assert_eq!(p, (0..27).map(f64::from).collect::<Vec<_>>());
    }

    /// A predictor whose kernel is constant: final weights zero, bias = kernel.
    fn constant_predictor(kernel: &[f64], orientations: usize) -> EnhancementPredictor {
        let k = kernel.len();
        let dims = NetDims::uniform(2, 4, 1, orientations * k);
        let mut net = siren_init(&dims, 30.0, 30.0, 1).unwrap();
        let (w, b) = net.layer_offsets(1);
        let params = net.params_mut();
        params[w..b].fill(0.0);
        for c in 0..orientations {
            params[b + c * k..b + (c + 1) * k].copy_from_slice(kernel);
        }
        EnhancementPredictor {
            net,
            window: 3,
            source_scale: 2,
            target_scale: 1,
            orientations,
        }
    }

    #[test]
    fn delta_kernel_reproduces_field() {
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let pred = constant_predictor(&delta, 2);
        let a = ramp(&[5, 6]);
        let b = a.map(|v| -v);
        let idx: Vec<usize> = (0..30).collect();
        let y = enhance_forward(&pred, &[a.clone(), b.clone()], &idx).unwrap();
        for i in 0..30 {
            assert_eq!(y[i * 2], a.data()[i]);
            assert_eq!(y[i * 2 + 1], b.data()[i]);
        }
        let zero = constant_predictor(&[0.0; 9], 2);
        let y = enhance_forward(&zero, &[a.clone(), b], &idx).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(enhance_forward(&pred, &[a], &idx).is_err());
    }

    fn coarse_subnet(seed: u64) -> ScaleSubnet {
        ScaleSubnet {
            scale: 2,
            bands: (1..=3).map(|i| BandRef::Detail { scale: 2, orientation: i }).collect(),
            band_shape: vec![8, 8],
            net: siren_init(&NetDims::uniform(2, 16, 2, 3), 30.0, 30.0, seed).unwrap(),
        }
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            max_steps: steps,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn realizable_upsampled_target() {
        let coarse = coarse_subnet(3);
        let fine = upsample_eval(&coarse, &make_grid(&[16, 16]).unwrap()).unwrap();
        let refs: Vec<&NdTensor> = fine.iter().collect();
        let spec = NetSpec::siren(NetDims::uniform(2, 16, 3, 27));
        let opts = EnhanceOptions { window: 3, warm_start: true };
        let (pred, rep) = train_enhancement(&spec, &coarse, &refs, &opts, &quick(200)).unwrap();
        assert!(rep.best_loss <= 1e-6, "{}", rep.best_loss);
        assert_eq!((pred.source_scale, pred.target_scale), (2, 1));
    }

    #[test]
    fn least_squares_solver() {
        // [[4, 2], [2, 3]] x = [2, 5] → x = [-0.5, 2]
        let x = solve_spd(vec![4.0, 2.0, 2.0, 3.0], vec![2.0, 5.0], 2);
        assert!((x[0] + 0.5).abs() < 1e-9 && (x[1] - 2.0).abs() < 1e-9);
        assert_eq!(solve_spd(vec![0.0; 4], vec![0.0; 2], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_predictor_dims_rejected() {
        let coarse = coarse_subnet(1);
        let fine = upsample_eval(&coarse, &make_grid(&[16, 16]).unwrap()).unwrap();
        let refs: Vec<&NdTensor> = fine.iter().collect();
        let spec = NetSpec::siren(NetDims::uniform(2, 8, 1, 26));
        let opts = EnhanceOptions { window: 3, warm_start: false };
        assert!(train_enhancement(&spec, &coarse, &refs, &opts, &quick(1)).is_err());
    }
}
