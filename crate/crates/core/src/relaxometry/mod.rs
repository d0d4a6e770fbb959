//! Relaxation signal models and the least-squares parameter fitter.

mod fit;
pub mod lm;
mod models;

pub use fit::{fit_map, fit_voxel, fit_voxel_with, MapFit, VoxelFit};
pub use lm::LmOptions;
pub use models::{
    derive_t1, derive_t1_voxel, signal_t1, signal_t2, ParameterMap, RelaxKind, RelaxTimes, DERIVE_T1_EPS,
};
