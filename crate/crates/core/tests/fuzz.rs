//! Every mutated model file must either load or fail with a library error,
//! and loaded models must decode without panicking.

mod common;

use wien_core::{encode, EncodeConfig, Mode, NdTensor};

use common::fuzz::{exercise, fuzz_models};

fn seed_models() -> Vec<Vec<u8>> {
    let t = NdTensor::from_fn(&[12, 10], |i| ((i[0] * 3 + i[1] * 7) % 11) as f64).unwrap();
    Mode::ALL
        .iter()
        .map(|&mode| {
            let mut cfg = EncodeConfig {
                mode,
                levels: if mode == Mode::Plain { 0 } else { 2 },
                budget: 14_000,
                ..Default::default()
            };
            cfg.train.max_steps = 5;
            encode(&t, &cfg).unwrap().model.to_bytes().unwrap()
        })
        .collect()
}

#[test]
fn mutated_model_files_never_panic() {
    let seeds = seed_models();
    for s in &seeds {
        assert_eq!(exercise(s), "decoded");
    }
    let counts = fuzz_models(&seeds, 10_500, 0x5eed).unwrap();
    println!("fuzz outcomes: {counts:?}");
    assert_eq!(counts.values().sum::<usize>(), 10_500);
}
