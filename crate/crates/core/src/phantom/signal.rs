use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mri_ops::{ComplexImage, C64};
use crate::relaxometry::{ParameterMap, RelaxTimes};

/// Smooth phase `Σ c_k·u^p·v^q` (total degree ≤ 2) over normalized
/// coordinates `u, v ∈ [−1, 1]`, coefficients uniform in ±`max_coeff` rad.
pub fn polynomial_phase(nx: usize, ny: usize, max_coeff: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..6).map(|_| rng.random_range(-max_coeff..=max_coeff)).collect();
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        let (u, v) = (norm(i, nx), norm(j, ny));
        c[0] + c[1] * u + c[2] * v + c[3] * u * u + c[4] * u * v + c[5] * v * v
    })
}

pub const PHASE_MAX_COEFF: f64 = 0.5;

/// Complex baseline images: the signal-model magnitude at each time, all
/// sharing one smooth phase map drawn from `seed`.
pub fn simulate_baselines(pmap: &ParameterMap, times: &RelaxTimes, seed: u64) -> Result<Vec<ComplexImage>> {
    if pmap.kind() != times.kind() {
        return Err(Error::InvalidArgument(format!(
            "parameter map is {} but protocol is {}",
            pmap.kind(),
            times.kind()
        )));
    }
    let (nx, ny) = pmap.shape();
    let phase = polynomial_phase(nx, ny, PHASE_MAX_COEFF, seed);
    let rot = phase.mapv(|p| C64::from_polar(1.0, p));
    pmap.render(times.times())
        .into_iter()
        .map(|mag| ComplexImage::new(&rot * &mag.mapv(|m| C64::new(m, 0.0))))
        .collect()
}
