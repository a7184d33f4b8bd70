//! Encoder, decoder and model file format.

mod budget;
mod decode;
mod encode;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use budget::{allocate_params, params_at, plan_roles, BudgetPlan, NetRole, PlanEntry, DEPTH, MAX_WIDTH, MIN_WIDTH};
pub use decode::{decode, decode_roi, decode_scaled, decode_with_nets, parse_box};
pub use encode::{budget_for_ratio, encode, BandMse, EncodeConfig, EncodeOutput, EncodeReport, NetReport};
pub use model::{
    load_model, parse_header, read_header, save_model, EncodedModel, ModelHeader, NetEntry, FORMAT_VERSION, MAGIC,
    MAX_ELEMENTS, MAX_HEADER_BYTES, MAX_LEVELS, MAX_NETS, MAX_NET_PARAMS, PREAMBLE_BYTES,
};

/// Which networks represent the tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// One network over the raw sample grid.
    #[serde(rename = "plain")]
    Plain,
    /// One single-output network per band.
    #[serde(rename = "eq2", alias = "eq2-independent")]
    Eq2,
    /// One network per scale emitting every orientation of that scale.
    #[serde(rename = "wavelet-inr")]
    WaveletInr,
    /// As `WaveletInr`, with one scale generated by a kernel predictor over
    /// the upsampled next-coarser subnet.
    #[serde(rename = "wien-inr")]
    WienInr,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Plain, Mode::Eq2, Mode::WaveletInr, Mode::WienInr];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Eq2 => "eq2",
            Mode::WaveletInr => "wavelet-inr",
            Mode::WienInr => "wien-inr",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "eq2" | "eq2-independent" => Ok(Mode::Eq2),
            "wavelet-inr" | "wavelet" => Ok(Mode::WaveletInr),
            "wien-inr" | "wien" => Ok(Mode::WienInr),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}
