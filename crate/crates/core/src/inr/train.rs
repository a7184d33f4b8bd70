use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, cosine_lr, quantize_roundtrip, AdamState, ForwardCache, MlpNet};
use crate::rng::Stream;

/// Coordinates per step when the grid is larger than this.
pub const DEFAULT_BATCH: usize = 1 << 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
    Mae,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "mae" => Ok(Self::Mae),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?} (expected mse or mae)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    /// Coordinates per step; `None` uses the whole grid up to
    /// [`DEFAULT_BATCH`] and uniform minibatches of that size beyond it.
    pub batch: Option<usize>,
    pub lr: f64,
    pub lr_min: f64,
    pub loss: Loss,
    pub seed: u64,
    /// Stop once the full-grid loss falls to this value.
    pub converge_at: Option<f64>,
    /// Interval for full-grid evaluation (minibatch mode) and for the
    /// binary16 loss probe.
    pub eval_every: usize,
    pub quantized_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch: None,
            lr: 1e-4,
            lr_min: 1e-6,
            loss: Loss::Mse,
            seed: 0,
            converge_at: None,
            eval_every: 250,
            quantized_eval: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::InvalidConfig(format!(
                "learning rates must satisfy 0 <= lr_min <= lr, got {} and {}",
                self.lr_min, self.lr
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be at least 1".into()));
        }
        Ok(())
    }

    fn batch_size(&self, n: usize) -> usize {
        match self.batch {
            Some(b) => b.min(n),
            None => n.min(DEFAULT_BATCH),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub best_step: usize,
    /// Full-grid loss of the returned parameters.
    pub best_loss: f64,
    /// Mean squared error per output channel of the returned parameters.
    pub channel_mse: Vec<f64>,
    /// Latest full-grid loss after a binary16 round trip, when probed.
    pub quantized_loss: Option<f64>,
    pub seconds: f64,
    /// `(step, full-grid loss)` at every evaluation.
    pub history: Vec<(usize, f64)>,
}

/// A fitting problem over `len()` samples: the net is evaluated at
/// `inputs` and its outputs are mapped to a loss.
pub(crate) trait Objective {
    fn len(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn gather_inputs(&self, idx: &[usize], out: &mut Vec<f64>);
    /// Mean loss over the batch; writes `d loss / d output` into `grad`.
    fn loss_grad(&self, idx: &[usize], output: &[f64], loss: Loss, grad: &mut [f64]) -> f64;
    /// Squared error per target channel summed over the batch.
    fn channel_sq_err(&self, idx: &[usize], output: &[f64]) -> Vec<f64>;
}

/// Per-point regression of `targets` (row-major `n × channels`) at `inputs`.
pub(crate) struct DirectFit {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub input_dim: usize,
    pub channels: usize,
}

pub(crate) fn pointwise_loss(pred: &[f64], target: &[f64], loss: Loss, grad: &mut [f64]) -> f64 {
    let scale = 1.0 / pred.len() as f64;
    let mut total = 0.0;
    for ((g, &y), &t) in grad.iter_mut().zip(pred).zip(target) {
        let r = y - t;
        match loss {
            Loss::Mse => {
                total += r * r;
                *g = 2.0 * r * scale;
            }
            Loss::Mae => {
                total += r.abs();
                *g = if r > 0.0 {
                    scale
                } else if r < 0.0 {
                    -scale
                } else {
                    0.0
                };
            }
        }
    }
    total * scale
}

pub(crate) fn gather_rows(src: &[f64], width: usize, idx: &[usize], out: &mut Vec<f64>) {
    out.clear();
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
}

impl Objective for DirectFit {
    fn len(&self) -> usize {
        self.targets.len() / self.channels
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn gather_inputs(&self, idx: &[usize], out: &mut Vec<f64>) {
        gather_rows(&self.inputs, self.input_dim, idx, out);
    }

    fn loss_grad(&self, idx: &[usize], output: &[f64], loss: Loss, grad: &mut [f64]) -> f64 {
        let c = self.channels;
        if idx.len() == self.len() && idx.first() == Some(&0) && is_identity(idx) {
            return pointwise_loss(output, &self.targets, loss, grad);
        }
        let mut t = Vec::with_capacity(idx.len() * c);
        gather_rows(&self.targets, c, idx, &mut t);
        pointwise_loss(output, &t, loss, grad)
    }

    fn channel_sq_err(&self, idx: &[usize], output: &[f64]) -> Vec<f64> {
        let c = self.channels;
        let mut acc = vec![0.0; c];
        for (row, &i) in output.chunks(c).zip(idx) {
            for (k, (&y, &t)) in row.iter().zip(&self.targets[i * c..(i + 1) * c]).enumerate() {
                acc[k] += (y - t) * (y - t);
            }
        }
        acc
    }
}

fn is_identity(idx: &[usize]) -> bool {
    idx.iter().enumerate().all(|(k, &i)| k == i)
}

/// Full-grid loss and per-channel MSE, evaluated in blocks.
pub(crate) fn full_loss(net: &MlpNet, obj: &dyn Objective, loss: Loss) -> Result<(f64, Vec<f64>)> {
    const BLOCK: usize = 1 << 14;
    let n = obj.len();
    let mut total = 0.0;
    let mut sq: Vec<f64> = Vec::new();
    let mut inputs = Vec::new();
    let mut idx: Vec<usize> = Vec::with_capacity(BLOCK);
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        idx.clear();
        idx.extend(start..end);
        obj.gather_inputs(&idx, &mut inputs);
        let out = net.forward(&inputs)?;
        let mut grad = vec![0.0; out.len()];
        total += obj.loss_grad(&idx, &out, loss, &mut grad) * (end - start) as f64;
        let part = obj.channel_sq_err(&idx, &out);
        if sq.is_empty() {
            sq = part;
        } else {
            sq.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        start = end;
    }
    sq.iter_mut().for_each(|v| *v /= n as f64);
    Ok((total / n as f64, sq))
}

/// Batch loss and its gradient with respect to every parameter, along the
/// trainer's own path.
pub(crate) fn batch_loss_grad(net: &MlpNet, obj: &dyn Objective, idx: &[usize], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let mut inputs = Vec::new();
    obj.gather_inputs(idx, &mut inputs);
    let mut cache = ForwardCache::default();
    net.forward_cached(&inputs, &mut cache)?;
    let mut grad_out = vec![0.0; cache.output().len()];
    let value = obj.loss_grad(idx, cache.output(), loss, &mut grad_out);
    let mut grads = vec![0.0; net.parameter_count()];
    net.backward(&cache, &grad_out, &mut grads)?;
    Ok((value, grads))
}

/// Loss of `net` regressing `targets` (row-major `n × output`) at `points`,
/// with its parameter gradient.
pub fn regression_loss_grad(net: &MlpNet, points: &[f64], targets: &[f64], loss: Loss) -> Result<(f64, Vec<f64>)> {
    let (p, c) = (net.dims().input, net.dims().output);
    let n = points.len() / p;
    if points.len() != n * p || targets.len() != n * c {
        return Err(Error::ShapeMismatch {
            expected: vec![n, c],
            actual: vec![targets.len()],
        });
    }
    let obj = DirectFit {
        inputs: points.to_vec(),
        targets: targets.to_vec(),
        input_dim: p,
        channels: c,
    };
    let idx: Vec<usize> = (0..n).collect();
    batch_loss_grad(net, &obj, &idx, loss)
}

struct Best {
    params: Vec<f64>,
    loss: f64,
    step: usize,
    converge_at: Option<f64>,
}

impl Best {
    /// Records `loss` if it improves; reports whether training may stop.
    fn consider(&mut self, loss: f64, step: usize, params: &[f64]) -> Result<bool> {
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if loss < self.loss {
            self.loss = loss;
            self.step = step;
            self.params.copy_from_slice(params);
        }
        Ok(self.converged())
    }

    fn converged(&self) -> bool {
        self.converge_at.is_some_and(|c| self.loss <= c)
    }
}

/// Adam with cosine decay and best-checkpoint tracking. The net is left
/// holding the best parameters seen.
pub(crate) fn fit(net: &mut MlpNet, obj: &dyn Objective, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let n = obj.len();
    if n == 0 {
        return Err(Error::InvalidShape("nothing to fit".into()));
    }
    if obj.input_dim() != net.dims().input {
        return Err(Error::ShapeMismatch {
            expected: vec![net.dims().input],
            actual: vec![obj.input_dim()],
        });
    }
    let started = Instant::now();
    let batch = cfg.batch_size(n);
    let full_batch = batch == n;
    let mut rng = Stream::new(cfg.seed);
    let mut state = AdamState::new(net.parameter_count(), cfg.lr);
    let mut cache = ForwardCache::default();
    let mut grads = vec![0.0; net.parameter_count()];
    let mut idx: Vec<usize> = (0..batch).collect();
    let mut inputs = Vec::new();
    if full_batch {
        obj.gather_inputs(&idx, &mut inputs);
    }
    let mut grad_out = Vec::new();

    let mut best = Best {
        params: net.params().to_vec(),
        loss: f64::INFINITY,
        step: 0,
        converge_at: cfg.converge_at,
    };
    let mut history = Vec::new();
    let mut quantized_loss = None;
    let mut steps = 0;

    for step in 0..cfg.max_steps {
        if !full_batch {
            for slot in idx.iter_mut() {
                *slot = rng.below(n);
            }
            obj.gather_inputs(&idx, &mut inputs);
        }
        net.forward_cached(&inputs, &mut cache)?;
        grad_out.resize(cache.output().len(), 0.0);
        let loss = obj.loss_grad(&idx, cache.output(), cfg.loss, &mut grad_out);
        let periodic = step % cfg.eval_every == 0;
        if full_batch {
            // the batch loss is the full-grid loss of the current parameters
            if periodic {
                history.push((step, loss));
            }
            if best.consider(loss, step, net.params())? {
                break;
            }
        } else {
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            if periodic {
                let (full, _) = full_loss(net, obj, cfg.loss)?;
                history.push((step, full));
                if best.consider(full, step, net.params())? {
                    break;
                }
            }
        }
        if cfg.quantized_eval && periodic {
            let q = quantize_roundtrip(net)?;
            quantized_loss = Some(full_loss(&q, obj, cfg.loss)?.0);
        }
        net.backward(&cache, &grad_out, &mut grads)?;
        state.lr = cosine_lr(cfg.lr, cfg.lr_min, step, cfg.max_steps);
        adam_step(net, &grads, &mut state)?;
        steps = step + 1;
    }
    // the parameters after the last update have not been scored yet
    if !best.converged() {
        let (last, _) = full_loss(net, obj, cfg.loss)?;
        history.push((steps, last));
        best.consider(last, steps, net.params())?;
    }
    net.params_mut().copy_from_slice(&best.params);
    let (final_loss, channel_mse) = full_loss(net, obj, cfg.loss)?;
    if cfg.quantized_eval {
        let q = quantize_roundtrip(net)?;
        quantized_loss = Some(full_loss(&q, obj, cfg.loss)?.0);
    }
    Ok(TrainReport {
        steps,
        best_step: best.step,
        best_loss: final_loss,
        channel_mse,
        quantized_loss,
        seconds: started.elapsed().as_secs_f64(),
        history,
    })
}
