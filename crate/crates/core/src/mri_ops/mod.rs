//! Complex linear algebra and Fourier operators of the accelerated
//! parallel-imaging model, plus sensitivity estimation from the
//! auto-calibration lines.

mod fft;
mod ops;
mod types;

pub use fft::{fft2c, fft2c_coils, fft2c_in_place, ifft2c, Direction};
pub use ops::{
    adjoint_op, apply_mask, estimate_sensitivity, estimate_sensitivity_averaged, expand, forward_op, reduce, rss,
    SENSITIVITY_EPS,
};
pub use types::{acs_range, CoilImages, ComplexImage, MultiCoil, MultiCoilKSpace, SamplingMask, SensitivityMaps, C64};
