//! The SENSE forward model `A = U ∘ F ∘ E` and its adjoint `A* = R ∘ F⁻¹ ∘ U`.

use ndarray::{Array2, Array3, Axis, Zip};

use super::fft::{fft2c_coils, Direction};
use super::types::{ComplexImage, MultiCoil, SamplingMask, SensitivityMaps, C64};
use crate::error::{Error, Result};

fn check_mask(ksp: &MultiCoil, mask: &SamplingMask) -> Result<()> {
    let (_, ky) = ksp.image_shape();
    if mask.len() != ky {
        return Err(Error::Shape(format!("mask has {} lines, k-space has k_y = {ky}", mask.len())));
    }
    Ok(())
}

fn check_sens(shape: (usize, usize), sens: &SensitivityMaps) -> Result<()> {
    if sens.image_shape() != shape {
        return Err(Error::Shape(format!("sensitivity maps are {:?}, data is {:?}", sens.image_shape(), shape)));
    }
    Ok(())
}

/// Zeroes every unsampled phase-encoding line (`U`).
pub fn apply_mask(ksp: &MultiCoil, mask: &SamplingMask) -> Result<MultiCoil> {
    check_mask(ksp, mask)?;
    let mut data = ksp.data().clone();
    for (j, &keep) in mask.lines().iter().enumerate() {
        if !keep {
            data.index_axis_mut(Axis(2), j).fill(C64::new(0.0, 0.0));
        }
    }
    Ok(MultiCoil::from_raw(data))
}

/// `E(x) = [S_1 x, …, S_nc x]`.
pub fn expand(img: &ComplexImage, sens: &SensitivityMaps) -> Result<MultiCoil> {
    check_sens(img.shape(), sens)?;
    let mut out = sens.maps().clone();
    for mut coil in out.outer_iter_mut() {
        coil *= img.data();
    }
    MultiCoil::new(out)
}

/// `R(y) = Σ_c conj(S_c) y_c`.
pub fn reduce(coils: &MultiCoil, sens: &SensitivityMaps) -> Result<ComplexImage> {
    check_sens(coils.image_shape(), sens)?;
    if coils.n_coils() != sens.n_coils() {
        return Err(Error::Shape(format!("{} coil images but {} sensitivity maps", coils.n_coils(), sens.n_coils())));
    }
    let (kx, ky) = coils.image_shape();
    let mut out = Array2::zeros((kx, ky));
    for (y, s) in coils.data().outer_iter().zip(sens.maps().outer_iter()) {
        Zip::from(&mut out).and(&y).and(&s).for_each(|o, &y, &s| *o += s.conj() * y);
    }
    ComplexImage::new(out)
}

/// `A x = U F E x`.
pub fn forward_op(img: &ComplexImage, sens: &SensitivityMaps, mask: &SamplingMask) -> Result<MultiCoil> {
    let coils = expand(img, sens)?;
    let ksp = fft2c_coils(&coils, Direction::Forward)?;
    apply_mask(&ksp, mask)
}

/// `A* y = R F⁻¹ U y`. Also the zero-filled reconstruction of `y`.
pub fn adjoint_op(ksp: &MultiCoil, sens: &SensitivityMaps, mask: &SamplingMask) -> Result<ComplexImage> {
    let masked = apply_mask(ksp, mask)?;
    let coils = fft2c_coils(&masked, Direction::Inverse)?;
    reduce(&coils, sens)
}

/// Voxelwise `sqrt(Σ_c |x_c|²)`.
pub fn rss(coils: &MultiCoil) -> Array2<f64> {
    coils.data().map(|v| v.norm_sqr()).sum_axis(Axis(0)).mapv(f64::sqrt)
}

/// Default guard for the sensitivity denominator, relative to the maximum RSS.
pub const SENSITIVITY_EPS: f64 = 1e-12;

/// Low-resolution coil images from the ACS lines alone, divided by their RSS.
/// Voxels whose RSS is below `rel_eps · max(RSS)` get zero sensitivity.
pub fn estimate_sensitivity(ksp: &MultiCoil, mask: &SamplingMask, rel_eps: f64) -> Result<SensitivityMaps> {
    check_mask(ksp, mask)?;
    if mask.acs_width() == 0 {
        return Err(Error::InvalidArgument("empty auto-calibration region".into()));
    }
    let acs = apply_mask(ksp, &mask.acs_only())?;
    let low = fft2c_coils(&acs, Direction::Inverse)?;
    let maps = SensitivityMaps::new(low.into_inner())?;
    Ok(maps.normalized(rel_eps))
}

/// [`estimate_sensitivity`] on the mean k-space over a stack of baselines.
pub fn estimate_sensitivity_averaged(
    stack: &[MultiCoil],
    mask: &SamplingMask,
    rel_eps: f64,
) -> Result<SensitivityMaps> {
    let first = stack.first().ok_or_else(|| Error::InvalidArgument("empty k-space stack".into()))?;
    let mut sum: Array3<C64> = Array3::zeros(first.data().dim());
    for ksp in stack {
        if ksp.data().dim() != sum.dim() {
            return Err(Error::Shape("baselines differ in k-space shape".into()));
        }
        sum += ksp.data();
    }
    sum.mapv_inplace(|v| v / stack.len() as f64);
    estimate_sensitivity(&MultiCoil::new(sum)?, mask, rel_eps)
}
