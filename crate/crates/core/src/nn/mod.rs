//! Sine-activated dense networks with closed-form backpropagation, Adam, and
//! binary16 weight storage.

mod adam;
pub mod fastmath;
mod mlp;
mod quant;

pub use adam::{adam_step, cosine_lr, AdamState};
pub use mlp::{siren_init, ForwardCache, MlpNet, NetDims};
pub use quant::{dequantize_f16, quantize_f16, quantize_f16_compensated, quantize_roundtrip, QuantizedWeights, F16_MAX};
