//! Shared fixtures for the codec benchmarks.

use wien_core::codec::EncodeOutput;
use wien_core::dataio::{generate, SyntheticKind, SyntheticSpec};
use wien_core::{encode, EncodeConfig, Mode, NdTensor};

pub fn speckle(shape: &[usize]) -> NdTensor {
    generate(&SyntheticSpec {
        kind: SyntheticKind::speckle(),
        shape: shape.to_vec(),
        seed: 7,
    })
    .expect("fixture")
}

/// A briefly trained model; decode cost does not depend on fit quality.
pub fn quick_model(mode: Mode, t: &NdTensor, budget: usize) -> EncodeOutput {
    let mut cfg = EncodeConfig {
        mode,
        levels: if mode == Mode::Plain { 0 } else { 2 },
        budget,
        ..Default::default()
    };
    cfg.train.max_steps = 5;
    encode(t, &cfg).expect("encode")
}
