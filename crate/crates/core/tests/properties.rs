use std::sync::OnceLock;

use proptest::prelude::*;
use wien_core::codec::decode_roi;
use wien_core::dataio::{parse_npy, npy_bytes, read_raw, write_raw};
use wien_core::inr::{enhance_forward, kernel_len, BandScales, EnhancementPredictor};
use wien_core::nn::{siren_init, MlpNet, NetDims};
use wien_core::rng::Stream;
use wien_core::wavelet::{dwt_pyramid, idwt_pyramid};
use wien_core::{decode, encode, DType, EncodeConfig, EncodedModel, Family, Mode, NdTensor};

fn random(shape: &[usize], seed: u64) -> NdTensor {
    let mut rng = Stream::new(seed);
    NdTensor::from_fn(shape, |_| rng.uniform() * 2.0 - 1.0).unwrap()
}

fn family() -> impl Strategy<Value = Family> {
    proptest::sample::select(Family::ALL.to_vec())
}

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        (4usize..70).prop_map(|n| vec![n]),
        (4usize..24, 4usize..24).prop_map(|(a, b)| vec![a, b]),
        (4usize..9, 4usize..9, 4usize..9).prop_map(|(a, b, c)| vec![a, b, c]),
    ]
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pyramid_reconstructs(shape in shape(), f in family(), levels in 1usize..3, seed in any::<u64>()) {
        let t = random(&shape, seed);
        let pyr = dwt_pyramid(&t, f, levels).unwrap();
        prop_assert!(pyr.coefficient_count() >= t.len());
        let back = idwt_pyramid(&pyr).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(max_diff(back.data(), t.data()) < 1e-9);
    }

    #[test]
    fn even_extents_keep_count_and_energy(
        half in prop::collection::vec(2usize..10, 1..3),
        f in family(),
        seed in any::<u64>(),
    ) {
        let shape: Vec<usize> = half.iter().map(|h| 4 * h).collect();
        let t = random(&shape, seed);
        let pyr = dwt_pyramid(&t, f, 2).unwrap();
        prop_assert_eq!(pyr.coefficient_count(), t.len());
        if f.is_orthogonal() {
            let e: f64 = t.data().iter().map(|v| v * v).sum();
            prop_assert!((pyr.energy() - e).abs() <= 1e-9 * e.max(1.0));
        }
    }

    #[test]
    fn band_scaling_roundtrips(shape in shape(), f in family(), seed in any::<u64>()) {
        let pyr = dwt_pyramid(&random(&shape, seed), f, 2).unwrap();
        let scales = BandScales::fit(&pyr);
        prop_assert!(scales.is_valid());
        let scaled = scales.scale(&pyr).unwrap();
        let peak = |t: &NdTensor| t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(peak(scaled.approx()) <= 1.0 + 1e-12);
        let back = scales.unscale(&scaled).unwrap();
        let a = idwt_pyramid(&back).unwrap();
        let b = idwt_pyramid(&pyr).unwrap();
        prop_assert!(max_diff(a.data(), b.data()) < 1e-12);
    }

    #[test]
    fn sine_net_output_is_bounded_by_last_layer(
        input in 1usize..4,
        hidden in prop::collection::vec(1usize..12, 1..4),
        output in 1usize..4,
        seed in any::<u64>(),
    ) {
        let dims = NetDims::new(input, hidden.clone(), output);
        let net = siren_init(&dims, 30.0, 30.0, seed).unwrap();
        prop_assert_eq!(net.parameter_count(), net.params().len());
        prop_assert_eq!(dims.parameter_count(), net.params().len());

        let last = hidden.len();
        let (w, b) = net.layer_offsets(last);
        let fan_in = *hidden.last().unwrap();
        let bound: Vec<f64> = (0..output)
            .map(|c| {
                let row = &net.params()[w + c * fan_in..w + (c + 1) * fan_in];
                row.iter().map(|v| v.abs()).sum::<f64>() + net.params()[b + c].abs()
            })
            .collect();
        let mut rng = Stream::new(seed ^ 1);
        let points: Vec<f64> = (0..20 * input).map(|_| rng.uniform() * 4.0 - 2.0).collect();
        let y = net.forward(&points).unwrap();
        for (k, v) in y.iter().enumerate() {
            prop_assert!(v.abs() <= bound[k % output] + 1e-12);
        }
    }

    #[test]
    fn delta_kernel_passes_fields_through(
        shape in prop_oneof![(5usize..30).prop_map(|n| vec![n]), (3usize..9, 3usize..9).prop_map(|(a, b)| vec![a, b])],
        window in prop::sample::select(vec![1usize, 3, 5]),
        seed in any::<u64>(),
    ) {
        let p = shape.len();
        let orientations = (1 << p) - 1;
        let k = kernel_len(window, p);
        let mut net = MlpNet::zeros(&NetDims::uniform(p, 8, 2, orientations * k), 30.0, 30.0).unwrap();
        let (_, b) = net.layer_offsets(2);
        for o in 0..orientations {
            net.params_mut()[b + o * k + k / 2] = 1.0;
        }
        let pred = EnhancementPredictor { net, window, source_scale: 2, target_scale: 1, orientations };
        let fields: Vec<NdTensor> = (0..orientations).map(|o| random(&shape, seed + o as u64)).collect();
        let n: usize = shape.iter().product();
        let idx: Vec<usize> = (0..n).collect();
        let y = enhance_forward(&pred, &fields, &idx).unwrap();
        for i in 0..n {
            for o in 0..orientations {
                prop_assert!((y[i * orientations + o] - fields[o].data()[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn npy_and_raw_roundtrip(shape in shape(), wide in any::<bool>(), seed in any::<u64>()) {
        let dtype = if wide { DType::F64 } else { DType::F32 };
        let t = random(&shape, seed).map(|v| v as f32 as f64).with_dtype(dtype);
        let back = parse_npy(&npy_bytes(&t)).unwrap();
        prop_assert_eq!(&back, &t);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.raw");
        write_raw(&t, &path).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, t.len() * dtype.size_bytes());
        let raw = read_raw(&path, &shape, dtype).unwrap();
        prop_assert_eq!(raw.data(), t.data());
    }
}

struct Decoded {
    model: EncodedModel,
    full: NdTensor,
}

fn decoded() -> &'static [Decoded] {
    static MODELS: OnceLock<Vec<Decoded>> = OnceLock::new();
    MODELS.get_or_init(|| {
        let t = random(&[14, 11], 5);
        Mode::ALL
            .iter()
            .map(|&mode| {
                let mut cfg = EncodeConfig {
                    mode,
                    levels: if mode == Mode::Plain { 0 } else { 2 },
                    budget: 14_000,
                    ..EncodeConfig::default()
                };
                cfg.train.max_steps = 5;
                let model = encode(&t, &cfg).unwrap().model;
                let full = decode(&model).unwrap();
                Decoded { model, full }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roi_matches_crop(which in 0usize..3, a0 in 0usize..14, a1 in 0usize..14, b0 in 0usize..11, b1 in 0usize..11) {
        let d = &decoded()[which];
        let ranges = [a0.min(a1)..a0.max(a1) + 1, b0.min(b1)..b0.max(b1) + 1];
        let part = decode_roi(&d.model, &ranges).unwrap();
        let crop = d.full.crop(&ranges).unwrap();
        prop_assert_eq!(part.shape(), crop.shape());
        prop_assert!(max_diff(part.data(), crop.data()) < 1e-6);
    }
}
