//! Synthetic cardiac relaxometry phantoms and the acquisition simulation:
//! baselines, coil sensitivities, undersampling masks, noise and augmentation.

mod augment;
mod coils;
mod dataset;
mod mask;
mod noise;
mod signal;
mod spec;

pub use augment::{augment, AffineTransform, AugmentParams};
pub use coils::{simulate_coils, simulate_coils_with, CoilParams};
pub use dataset::{simulate_slice, simulate_slice_from, simulate_training_slice, ProtocolSpec, SimulatedSlice};
pub use mask::make_mask;
pub use noise::{add_noise, noise_sigma};
pub use signal::{polynomial_phase, simulate_baselines, PHASE_MAX_COEFF};
pub use spec::{generate_phantom, Phantom, PhantomSpec, Region, Shape, Tissue};
