//! Image-quality metrics on magnitude images.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn max_of(x: &Array2<f64>) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn rmse(est: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    same_shape(est, reference)?;
    let se: f64 = Zip::from(est).and(reference).fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok((se / reference.len().max(1) as f64).sqrt())
}

/// `20·log10(max(reference) / rmse)`; `+∞` when the images are identical.
pub fn psnr(est: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    let peak = max_of(reference);
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("PSNR reference has no positive peak".into()));
    }
    psnr_with_peak(est, reference, peak)
}

pub fn psnr_with_peak(est: &Array2<f64>, reference: &Array2<f64>, peak: f64) -> Result<f64> {
    let e = rmse(est, reference)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / e).log10())
}

/// `‖est − reference‖² / ‖reference‖²`.
pub fn nmse(est: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    same_shape(est, reference)?;
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::InvalidArgument("NMSE reference is zero".into()));
    }
    let se: f64 = Zip::from(est).and(reference).fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok(se / energy)
}

/// Normalized `size×size` Gaussian, row-major.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Valid-mode weighted local sums.
fn filter_valid(x: &Array2<f64>, w: &[f64], k: usize) -> Array2<f64> {
    let (h, wd) = x.dim();
    Array2::from_shape_fn((h + 1 - k, wd + 1 - k), |(i, j)| {
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                acc += w[a * k + b] * x[[i + a, j + b]];
            }
        }
        acc
    })
}

/// Mean local SSIM over an 11×11 Gaussian window (σ = 1.5), with the dynamic
/// range taken as the maximum of the reference.
pub fn ssim(est: &Array2<f64>, reference: &Array2<f64>) -> Result<f64> {
    let range = max_of(reference);
    if !(range > 0.0) {
        return Err(Error::InvalidArgument("SSIM reference has no positive maximum".into()));
    }
    ssim_with_range(est, reference, range)
}

pub fn ssim_with_range(est: &Array2<f64>, reference: &Array2<f64>, range: f64) -> Result<f64> {
    same_shape(est, reference)?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}")));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidArgument(format!("SSIM dynamic range must be positive, got {range}")));
    }
    let k = SSIM_WINDOW;
    let win = gaussian_window(k, SSIM_SIGMA);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mx = filter_valid(est, &win, k);
    let my = filter_valid(reference, &win, k);
    let mxx = filter_valid(&(est * est), &win, k);
    let myy = filter_valid(&(reference * reference), &win, k);
    let mxy = filter_valid(&(est * reference), &win, k);
    let mut total = 0.0;
    Zip::from(&mx).and(&my).and(&mxx).and(&myy).and(&mxy).for_each(|&mx, &my, &mxx, &myy, &mxy| {
        let vx = mxx - mx * mx;
        let vy = myy - my * my;
        let cxy = mxy - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    });
    Ok(total / mx.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub nmse: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(est: &Array2<f64>, reference: &Array2<f64>) -> Result<Self> {
        Ok(Self { psnr: psnr(est, reference)?, nmse: nmse(est, reference)?, ssim: ssim(est, reference)? })
    }

    /// Mean of each field. PSNR averages skip infinite entries unless all are infinite.
    pub fn mean(reports: &[MetricReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let finite: Vec<f64> = reports.iter().map(|r| r.psnr).filter(|p| p.is_finite()).collect();
        let psnr = if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        Some(Self {
            psnr,
            nmse: reports.iter().map(|r| r.nmse).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(w[5 * 11 + 5], w.iter().copied().fold(0.0, f64::max));
    }
}
