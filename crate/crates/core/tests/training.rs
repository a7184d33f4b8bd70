//! Head-to-head training oracles for the model zoo.

use wien_core::codec::params_at;
use wien_core::dataio::{generate, SyntheticKind, SyntheticSpec};
use wien_core::inr::{
    default_omega0, train_enhancement, train_scale_subnet, upsample_eval, BandRef, BandScales, EnhanceOptions, NetSpec,
    ScaleSubnet, TrainConfig,
};
use wien_core::nn::{siren_init, NetDims};
use wien_core::tensor::make_grid;
use wien_core::wavelet::{dwt_pyramid, Family};
use wien_core::NdTensor;

fn cfg(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        max_steps: steps,
        lr: 1e-3,
        seed,
        ..TrainConfig::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn widest(p: usize, outputs: usize, budget: usize) -> usize {
    (1..).take_while(|&w| params_at(p, w, outputs) <= budget).last().unwrap()
}

fn details(t: &NdTensor, scale: usize, levels: usize) -> (Vec<BandRef>, Vec<NdTensor>) {
    let pyr = dwt_pyramid(t, Family::Haar, levels).unwrap();
    let scaled = BandScales::fit(&pyr).scale(&pyr).unwrap();
    let refs: Vec<BandRef> = (1..=3).map(|orientation| BandRef::Detail { scale, orientation }).collect();
    let bands = refs.iter().map(|r| r.get(&scaled).clone()).collect();
    (refs, bands)
}

#[test]
fn joint_subnet_matches_independent_nets() {
    let t = generate(&SyntheticSpec {
        kind: SyntheticKind::texture(),
        shape: vec![64, 64],
        seed: 3,
    })
    .unwrap();
    let (refs, bands) = details(&t, 1, 1);
    let views: Vec<&NdTensor> = bands.iter().collect();
    let budget = params_at(2, 40, 3);
    let solo_width = widest(2, 1, budget / 3);
    let omega0 = 60.0;
    let (mut joint, mut solo) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let spec = NetSpec::new(NetDims::uniform(2, 40, 3, 3), omega0, 30.0);
        let (_, rep) = train_scale_subnet(1, &refs, &views, &spec, &cfg(1500, seed)).unwrap();
        joint.push(mean(&rep.channel_mse));
        let spec = NetSpec::new(NetDims::uniform(2, solo_width, 3, 1), omega0, 30.0);
        let per_band: Vec<f64> = (0..3)
            .map(|c| {
                let (_, rep) = train_scale_subnet(1, &refs[c..=c], &views[c..=c], &spec, &cfg(1500, seed)).unwrap();
                rep.channel_mse[0]
            })
            .collect();
        solo.push(mean(&per_band));
    }
    let (j, s) = (median(joint), median(solo));
    assert!(j <= 1.05 * s, "joint {j:.4e} vs independent {s:.4e} (widths 40 / {solo_width})");
}

/// A frozen coarse subnet with three smooth output channels on a 16x16 grid.
fn coarse_subnet() -> ScaleSubnet {
    let net = siren_init(&NetDims::uniform(2, 16, 2, 3), 3.0, 3.0, 5).unwrap();
    ScaleSubnet {
        scale: 2,
        bands: (1..=3).map(|orientation| BandRef::Detail { scale: 2, orientation }).collect(),
        band_shape: vec![16, 16],
        net,
    }
}

/// Edge-clamped 3x3 correlation of `f` with `k` (row-major).
fn correlate3(f: &NdTensor, k: &[f64; 9]) -> NdTensor {
    let (h, w) = (f.shape()[0] as isize, f.shape()[1] as isize);
    NdTensor::from_fn(f.shape(), |i| {
        let mut acc = 0.0;
        for (t, kv) in k.iter().enumerate() {
            let r = (i[0] as isize + t as isize / 3 - 1).clamp(0, h - 1) as usize;
            let c = (i[1] as isize + t as isize % 3 - 1).clamp(0, w - 1) as usize;
            acc += kv * f.get(&[r, c]).unwrap();
        }
        acc
    })
    .unwrap()
}

#[test]
fn fixed_convolution_is_identified() {
    let coarse = coarse_subnet();
    let fields = upsample_eval(&coarse, &make_grid(&[32, 32]).unwrap()).unwrap();
    let kernel = [0.05, -0.2, 0.1, 0.3, 0.5, -0.1, 0.0, 0.15, -0.05];
    let targets: Vec<NdTensor> = fields.iter().map(|f| correlate3(f, &kernel)).collect();
    let views: Vec<&NdTensor> = targets.iter().collect();
    let spec = NetSpec::siren(NetDims::uniform(2, 24, 2, 27));
    for warm_start in [true, false] {
        let opts = EnhanceOptions { window: 3, warm_start };
        let (_, rep) = train_enhancement(&spec, &coarse, &views, &opts, &cfg(2000, 1)).unwrap();
        assert!(rep.best_loss <= 1e-4, "warm start {warm_start}: {:.3e}", rep.best_loss);
    }
}

/// Content at the coarse grid's Nyquist rate splits evenly between the two
/// halves of any two-channel filter bank, so the fixture must be band-limited
/// at its own scale: the scale-2 approximation of the smooth fixture.
#[test]
fn upsampled_subnet_adds_no_finer_detail() {
    let t = generate(&SyntheticSpec {
        kind: SyntheticKind::smooth(),
        shape: vec![64, 64],
        seed: 2,
    })
    .unwrap();
    let pyr = dwt_pyramid(&t, Family::Haar, 2).unwrap();
    let scaled = BandScales::fit(&pyr).scale(&pyr).unwrap();
    let band = scaled.approx().clone();
    let spec = NetSpec::new(NetDims::uniform(2, 48, 3, 1), 30.0, 30.0);
    let (subnet, _) = train_scale_subnet(2, &[BandRef::Approx], &[&band], &spec, &cfg(1500, 0)).unwrap();
    for field in upsample_eval(&subnet, &make_grid(&[32, 32]).unwrap()).unwrap() {
        let pyr = dwt_pyramid(&field, Family::Haar, 1).unwrap();
        let finest: f64 = (1..=3).map(|o| pyr.detail(1, o).data().iter().map(|v| v * v).sum::<f64>()).sum();
        let total = pyr.energy();
        assert!(finest < 0.05 * total, "finest-band share {:.3}", finest / total);
    }
}

/// Head-to-head on the finest band of a speckle pyramid: the predictor
/// refining a frozen scale-2 subnet against a plain subnet of at most the
/// same size fitted to `d_1` directly. Each side uses its codec frequencies.
#[test]
fn enhancement_beats_size_matched_subnet_on_speckle() {
    let t = generate(&SyntheticSpec {
        kind: SyntheticKind::speckle(),
        shape: vec![128, 128],
        seed: 7,
    })
    .unwrap();
    let (coarse_refs, coarse_bands) = details(&t, 2, 2);
    let (fine_refs, fine_bands) = details(&t, 1, 2);
    let coarse_views: Vec<&NdTensor> = coarse_bands.iter().collect();
    let fine_views: Vec<&NdTensor> = fine_bands.iter().collect();
    let coarse_spec = NetSpec::new(NetDims::uniform(2, 48, 3, 3), default_omega0(2, 2, false), 30.0);
    let pred_spec = NetSpec::siren(NetDims::uniform(2, 32, 3, 27));
    let budget = pred_spec.dims.parameter_count();
    let width = widest(2, 3, budget);
    let subnet_spec = NetSpec::new(NetDims::uniform(2, width, 3, 3), default_omega0(1, 2, false), 30.0);
    let opts = EnhanceOptions {
        window: 3,
        warm_start: true,
    };
    let (mut wien, mut plain) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let (coarse, _) = train_scale_subnet(2, &coarse_refs, &coarse_views, &coarse_spec, &cfg(1000, seed)).unwrap();
        let (_, rep) = train_enhancement(&pred_spec, &coarse, &fine_views, &opts, &cfg(1000, seed)).unwrap();
        wien.push(rep.best_loss);
        let (_, rep) = train_scale_subnet(1, &fine_refs, &fine_views, &subnet_spec, &cfg(1000, seed)).unwrap();
        plain.push(rep.best_loss);
    }
    let (w, p) = (median(wien.clone()), median(plain.clone()));
    assert!(
        w < p,
        "predictor {w:.4e} {wien:?} vs subnet {p:.4e} {plain:?} ({budget} vs {} params)",
        params_at(2, width, 3)
    );
}
