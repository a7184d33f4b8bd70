//! Coordinate-network models: plain fits, per-scale wavelet subnets, and the
//! kernel-predicting enhancement path.

mod enhance;
mod subnet;
mod train;

pub use enhance::{
    enhance_forward, enhancement_loss_grad, extract_patch, kernel_len, train_enhancement, EnhanceOptions,
    EnhancementPredictor, WINDOWS,
};
pub use subnet::{
    default_omega0, train_plain_inr, train_scale_subnet, upsample_eval, BandRef, BandScales,
    NetSpec, ScaleSubnet,
};
pub use train::{regression_loss_grad, Loss, TrainConfig, TrainReport, DEFAULT_BATCH};

pub(crate) use enhance::{apply_kernels, gather_patches, Patcher};
