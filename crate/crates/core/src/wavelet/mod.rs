//! Separable multi-level discrete wavelet transforms with periodized
//! boundaries.

mod filters;
mod pyramid;
mod transform;

pub use filters::{wavelet_filters, wavelet_filters_by_name, Family, FilterBank, Taps};
pub use pyramid::{
    band_l2_norms, dwt_pyramid, idwt_pyramid, level_shapes, orientation_count, BandNorms,
    WaveletPyramid,
};
pub use transform::{dwt1d, idwt1d};

pub(crate) use pyramid::{roi_supports, synthesize_level};
