//! Wavelet-domain implicit neural representation codec.
//!
//! A tensor is normalized, decomposed into a wavelet pyramid, and every scale
//! is fitted by a small sine-activated coordinate network. The finest detail
//! scale can instead be generated by an enhancement predictor that emits
//! per-coordinate kernels applied to the upsampled next-coarser prediction.
//! Weights are stored as binary16.

pub mod codec;
pub mod dataio;
pub mod error;
pub mod inr;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod wavelet;

pub use codec::{decode, decode_roi, encode, load_model, save_model, EncodeConfig, EncodedModel, Mode};
pub use error::{Error, Result};
pub use tensor::{DType, NdTensor, NormMode, NormScope, Normalization, NormalizationRecord};
pub use wavelet::{Family, WaveletPyramid};
