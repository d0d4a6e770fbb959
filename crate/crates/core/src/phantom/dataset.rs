use ndarray::Array2;

use super::augment::{augment, AugmentParams};
use super::coils::simulate_coils;
use super::mask::make_mask;
use super::noise::add_noise;
use super::signal::simulate_baselines;
use super::spec::{generate_phantom, Phantom, PhantomSpec};
use crate::error::{Error, Result};
use crate::mri_ops::{apply_mask, expand, fft2c_coils, rss, Direction, MultiCoil, SamplingMask, SensitivityMaps};
use crate::relaxometry::{ParameterMap, RelaxKind, RelaxTimes};

/// Acquisition settings for simulated slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolSpec {
    pub times: RelaxTimes,
    pub n_coils: usize,
    pub acceleration: usize,
    pub acs_width: usize,
    /// Energy SNR of the measured k-space; `f64::INFINITY` for noiseless.
    pub snr: f64,
}

impl ProtocolSpec {
    pub fn new(kind: RelaxKind) -> Self {
        Self { times: RelaxTimes::default_for(kind), n_coils: 10, acceleration: 4, acs_width: 24, snr: f64::INFINITY }
    }

    pub fn kind(&self) -> RelaxKind {
        self.times.kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_coils == 0 || self.acceleration == 0 {
            return Err(Error::InvalidArgument("n_coils and acceleration must be ≥ 1".into()));
        }
        if self.snr.is_nan() || self.snr <= 0.0 {
            return Err(Error::InvalidArgument(format!("SNR must be positive, got {}", self.snr)));
        }
        Ok(())
    }
}

/// One simulated slice: ground truth, fully sampled and measured k-space per baseline.
#[derive(Clone, Debug)]
pub struct SimulatedSlice {
    pub phantom: Phantom,
    pub times: RelaxTimes,
    pub sens: SensitivityMaps,
    pub mask: SamplingMask,
    /// Noiseless fully sampled k-space, one entry per baseline.
    pub kspace_full: Vec<MultiCoil>,
    /// Noisy, masked measurement, one entry per baseline.
    pub kspace: Vec<MultiCoil>,
    /// RSS of the fully sampled coil images, one per baseline.
    pub target: Vec<Array2<f64>>,
}

impl SimulatedSlice {
    pub fn truth(&self) -> ParameterMap {
        self.phantom.map(self.times.kind())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.phantom.shape()
    }
}

/// Seeds derived from one slice seed, so that each stage draws independently.
fn sub_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ stage
}

/// Simulates a slice from an explicit phantom spec.
pub fn simulate_slice_from(spec: &PhantomSpec, protocol: &ProtocolSpec, seed: u64) -> Result<SimulatedSlice> {
    protocol.validate()?;
    let phantom = generate_phantom(spec)?;
    let (nx, ny) = phantom.shape();
    let pmap = phantom.map(protocol.kind());
    let baselines = simulate_baselines(&pmap, &protocol.times, sub_seed(seed, 1))?;
    let sens = simulate_coils(protocol.n_coils, nx, ny, sub_seed(seed, 2));
    let mask = make_mask(ny, protocol.acceleration, protocol.acs_width, sub_seed(seed, 3))?;
    let coil_images = baselines.iter().map(|b| expand(b, &sens)).collect::<Result<Vec<_>>>()?;
    finish_slice(phantom, protocol, sens, mask, coil_images, seed)
}

fn finish_slice(
    phantom: Phantom,
    protocol: &ProtocolSpec,
    sens: SensitivityMaps,
    mask: SamplingMask,
    coil_images: Vec<MultiCoil>,
    seed: u64,
) -> Result<SimulatedSlice> {
    let target = coil_images.iter().map(rss).collect();
    let kspace_full = coil_images.iter().map(|c| fft2c_coils(c, Direction::Forward)).collect::<Result<Vec<_>>>()?;
    let kspace = kspace_full
        .iter()
        .enumerate()
        .map(|(t, k)| apply_mask(&add_noise(k, protocol.snr, sub_seed(seed, 10 + t as u64))?, &mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedSlice { phantom, times: protocol.times.clone(), sens, mask, kspace_full, kspace, target })
}

/// Simulates a slice of the random cardiac phantom for `seed`.
pub fn simulate_slice(nx: usize, ny: usize, protocol: &ProtocolSpec, seed: u64) -> Result<SimulatedSlice> {
    simulate_slice_from(&PhantomSpec::cardiac(nx, ny, sub_seed(seed, 0)), protocol, seed)
}

/// Like [`simulate_slice`], then applies the training augmentation to the
/// fully sampled coil images (and the ground-truth maps) before k-space,
/// noise and masking are computed. Noise SNR, when `snr_min` is finite, is
/// drawn with `1/snr` uniform in `[0, 1/snr_min]`.
pub fn simulate_training_slice(
    nx: usize,
    ny: usize,
    protocol: &ProtocolSpec,
    aug: &AugmentParams,
    snr_min: f64,
    seed: u64,
) -> Result<SimulatedSlice> {
    use rand::{Rng, SeedableRng};
    let base = simulate_slice(nx, ny, protocol, seed)?;
    let coil_images =
        base.kspace_full.iter().map(|k| fft2c_coils(k, Direction::Inverse)).collect::<Result<Vec<_>>>()?;
    let (coil_images, t) = augment(&coil_images, aug, sub_seed(seed, 4))?;
    let mut phantom = base.phantom;
    if let Some(t) = t {
        for ch in [&mut phantom.a, &mut phantom.b, &mut phantom.t1_star, &mut phantom.t2] {
            *ch = t.apply_real(ch);
        }
        let m = t.apply_real(&phantom.mask.mapv(|v| if v { 1.0 } else { 0.0 }));
        phantom.mask = m.mapv(|v| v >= 0.5);
    }
    let mut proto = protocol.clone();
    if snr_min.is_finite() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sub_seed(seed, 5));
        let inv: f64 = rng.random_range(0.0..=1.0 / snr_min);
        proto.snr = if inv > 0.0 { 1.0 / inv } else { f64::INFINITY };
    }
    finish_slice(phantom, &proto, base.sens, base.mask, coil_images, seed)
}
