use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mri_ops::{acs_range, SamplingMask};

/// ACS center lines plus every line `j` with `j mod R == offset`, where the
/// offset is drawn from `seed` in `0..R`. The sampled count is therefore
/// `acs + #{j ∉ ACS : j mod R == offset}`.
pub fn make_mask(ky: usize, acceleration: usize, acs_width: usize, seed: u64) -> Result<SamplingMask> {
    if acceleration == 0 {
        return Err(Error::InvalidArgument("acceleration must be ≥ 1".into()));
    }
    if acs_width >= ky {
        return Err(Error::InvalidArgument(format!("ACS width {acs_width} must be below k_y = {ky}")));
    }
    if acceleration == 1 {
        return SamplingMask::new(vec![true; ky], acs_width, 1);
    }
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0..acceleration);
    let acs = acs_range(ky, acs_width);
    let lines = (0..ky).map(|j| acs.contains(&j) || j % acceleration == offset).collect();
    SamplingMask::new(lines, acs_width, acceleration)
}
