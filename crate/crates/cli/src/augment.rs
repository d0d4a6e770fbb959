//! Training stacks regenerated every epoch from the stored fully sampled
//! k-space: random affine augmentation of the coil images, then fresh noise
//! and the slice's own mask.

use qmri_core::mri_ops::{apply_mask, fft2c_coils, rss, Direction};
use qmri_core::phantom::{add_noise, augment, AugmentParams};
use qmri_recon::{ReconDataset, TrainSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SliceFile;

pub struct AugmentedData {
    pub files: Vec<SliceFile>,
    pub aug: AugmentParams,
    /// Lower end of the noise SNR range; infinite disables noise.
    pub snr_min: f64,
    pub seed: u64,
}

impl AugmentedData {
    fn enabled(&self) -> bool {
        self.aug.probability > 0.0 || self.snr_min.is_finite()
    }

    fn draw_seed(&self, epoch: usize, index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xA06_0000);
        rng.set_stream(((epoch as u64) << 32) | index as u64);
        rng.random()
    }
}

impl ReconDataset for AugmentedData {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn sample(&self, epoch: usize, index: usize) -> qmri_recon::Result<TrainSample> {
        let f = &self.files[index];
        if !self.enabled() {
            return Ok(f.sample());
        }
        let seed = self.draw_seed(epoch, index);
        let coils =
            f.kspace_full.iter().map(|k| fft2c_coils(k, Direction::Inverse)).collect::<qmri_core::Result<Vec<_>>>()?;
        let (coils, _) = augment(&coils, &self.aug, seed)?;
        let snr = if self.snr_min.is_finite() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A);
            let inv: f64 = rng.random_range(0.0..=1.0 / self.snr_min);
            if inv > 0.0 {
                1.0 / inv
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        let target = coils.iter().map(rss).collect();
        let mut kspace = Vec::with_capacity(coils.len());
        for (t, c) in coils.iter().enumerate() {
            let full = fft2c_coils(c, Direction::Forward)?;
            kspace.push(apply_mask(&add_noise(&full, snr, seed.wrapping_add(t as u64 + 1))?, &f.mask)?);
        }
        Ok(TrainSample { kspace, mask: f.mask.clone(), target })
    }
}
