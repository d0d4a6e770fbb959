use ndarray::Zip;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mri_ops::{MultiCoil, C64};

/// Noise standard deviation (per complex sample, `E|n|² = σ²`) giving
/// `‖signal‖ / √(N·σ²) = snr`.
pub fn noise_sigma(ksp: &MultiCoil, snr: f64) -> f64 {
    ksp.norm() / (snr * (ksp.data().len() as f64).sqrt())
}

/// Adds circular complex Gaussian noise at the given energy SNR. `snr = ∞`
/// returns the input unchanged.
pub fn add_noise(ksp: &MultiCoil, snr: f64, seed: u64) -> Result<MultiCoil> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidArgument(format!("SNR must be positive, got {snr}")));
    }
    if snr.is_infinite() {
        return Ok(ksp.clone());
    }
    let sigma = noise_sigma(ksp, snr);
    let normal = Normal::new(0.0, sigma / std::f64::consts::SQRT_2).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ksp.data().clone();
    Zip::from(&mut out).for_each(|v| *v += C64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
    MultiCoil::new(out)
}
