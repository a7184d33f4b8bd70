//! Oracles shared by the integration suites.
#![allow(dead_code)]

pub mod fuzz;

use wien_core::inr::{enhancement_loss_grad, kernel_len, regression_loss_grad, EnhancementPredictor, Loss};
use wien_core::nn::{siren_init, MlpNet, NetDims};
use wien_core::rng::Stream;
use wien_core::NdTensor;

pub fn random_tensor(shape: &[usize], rng: &mut Stream) -> NdTensor {
    NdTensor::from_fn(shape, |_| rng.uniform() * 2.0 - 1.0).unwrap()
}

/// Worst per-parameter discrepancy between an analytic gradient and central
/// differences of `loss` with step `h`. Entries where both are below `floor`
/// are compared absolutely against it.
pub fn worst_relative_error(params: &[f64], analytic: &[f64], h: f64, floor: f64, mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let keep = p[i];
        p[i] = keep + h;
        let up = loss(&p);
        p[i] = keep - h;
        let down = loss(&p);
        p[i] = keep;
        let fd = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(fd.abs()).max(floor);
        worst = worst.max((analytic[i] - fd).abs() / scale);
    }
    worst
}

pub struct GradCase {
    pub label: String,
    pub worst: f64,
}

fn random_net(rng: &mut Stream, input: usize, output: usize) -> MlpNet {
    let depth = 1 + rng.below(3);
    let hidden: Vec<usize> = (0..depth).map(|_| 3 + rng.below(8)).collect();
    let omega0 = 1.0 + 29.0 * rng.uniform();
    let omega = 1.0 + 29.0 * rng.uniform();
    siren_init(&NetDims::new(input, hidden, output), omega0, omega, rng.next_u64()).unwrap()
}

/// Coordinate regression on a handful of random points.
pub fn plain_case(seed: u64) -> GradCase {
    let mut rng = Stream::new(seed);
    let p = 1 + rng.below(3);
    let out = 1 + rng.below(3);
    let net = random_net(&mut rng, p, out);
    let n = 6 + rng.below(10);
    let points: Vec<f64> = (0..n * p).map(|_| rng.uniform() * 2.0 - 1.0).collect();
    let targets: Vec<f64> = (0..n * out).map(|_| rng.uniform()).collect();
    let (_, grad) = regression_loss_grad(&net, &points, &targets, Loss::Mse).unwrap();
    let worst = worst_relative_error(net.params(), &grad, 1e-5, 1e-6, |w| {
        let probe = MlpNet::from_params(net.dims().clone(), net.omega0(), net.omega_hidden(), w.to_vec()).unwrap();
        regression_loss_grad(&probe, &points, &targets, Loss::Mse).unwrap().0
    });
    GradCase {
        label: format!("plain {:?}", net.dims()),
        worst,
    }
}

/// Kernel prediction against random coarse fields on a small fine grid.
pub fn enhancement_case(seed: u64) -> GradCase {
    let mut rng = Stream::new(seed);
    let p = 1 + rng.below(2);
    let window = [3, 5][rng.below(2)];
    let o = (1 << p) - 1;
    let shape: Vec<usize> = (0..p).map(|_| if p == 1 { 9 + rng.below(6) } else { 3 + rng.below(3) }).collect();
    let net = random_net(&mut rng, p, o * kernel_len(window, p));
    let fields: Vec<NdTensor> = (0..o).map(|_| random_tensor(&shape, &mut rng)).collect();
    let n: usize = shape.iter().product();
    let targets: Vec<f64> = (0..n * o).map(|_| rng.uniform()).collect();
    let pred = EnhancementPredictor {
        net,
        window,
        source_scale: 2,
        target_scale: 1,
        orientations: o,
    };
    let (_, grad) = enhancement_loss_grad(&pred, &fields, &targets, Loss::Mse).unwrap();
    let worst = worst_relative_error(pred.net.params(), &grad, 1e-5, 1e-6, |w| {
        let mut probe = pred.clone();
        probe.net.params_mut().copy_from_slice(w);
        enhancement_loss_grad(&probe, &fields, &targets, Loss::Mse).unwrap().0
    });
    GradCase {
        label: format!("enhancement window {window} {:?}", pred.net.dims()),
        worst,
    }
}

/// The 50-net gradient check: 25 plain and 25 enhancement nets.
pub fn gradient_cases() -> Vec<GradCase> {
    (0..50u64)
        .map(|s| if s % 2 == 0 { plain_case(1000 + s) } else { enhancement_case(1000 + s) })
        .collect()
}
