use ndarray::Array2;
use qmri_core::metrics::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))
}

#[test]
fn psnr_hand_computed() {
    let x = Array2::from_elem((4, 4), 1.0);
    assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
    let mut y = x.clone();
    y[[2, 1]] = 2.0;
    assert!((psnr(&y, &x).unwrap() - 20.0 * 4f64.log10()).abs() < 1e-12);
    assert!((psnr(&y, &x).unwrap() - 12.0412).abs() < 1e-4);
    assert!(psnr(&y, &Array2::zeros((4, 4))).is_err());
    assert!(psnr(&y, &Array2::ones((4, 5))).is_err());
}

#[test]
fn psnr_is_scale_invariant() {
    let x = random(12, 12, 1);
    let y = random(12, 12, 2);
    let p = psnr(&y, &x).unwrap();
    for c in [0.01, 3.0, 250.0] {
        assert!((psnr(&(&y * c), &(&x * c)).unwrap() - p).abs() < 1e-9);
    }
}

#[test]
fn nmse_values() {
    let x = random(8, 9, 3);
    assert_eq!(nmse(&x, &x).unwrap(), 0.0);
    assert_eq!(nmse(&Array2::zeros((8, 9)), &x).unwrap(), 1.0);
    assert!(nmse(&x, &Array2::zeros((8, 9))).is_err());
    let y = random(8, 9, 4);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..8 {
        for j in 0..9 {
            num += (y[[i, j]] - x[[i, j]]).powi(2);
            den += x[[i, j]].powi(2);
        }
    }
    assert!((nmse(&y, &x).unwrap() - num / den).abs() < 1e-14);
}

#[test]
fn nmse_and_rmse_agree() {
    let x = random(10, 7, 5);
    let y = random(10, 7, 6);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let r = rmse(&y, &x).unwrap();
    assert!((nmse(&y, &x).unwrap() * energy - r * r * 70.0).abs() < 1e-10);
}

#[test]
fn ssim_identity_and_inversion() {
    let x = random(16, 16, 7);
    assert_eq!(ssim(&x, &x).unwrap(), 1.0);
    let binary = Array2::from_shape_fn((16, 16), |(i, j)| if (i / 4 + j / 4) % 2 == 0 { 1.0 } else { 0.0 });
    let inv = binary.mapv(|v| 1.0 - v);
    assert!(ssim(&inv, &binary).unwrap() < 0.2);
    assert!(ssim(&x, &x).unwrap() <= 1.0);
    assert!(ssim(&random(10, 16, 1), &random(10, 16, 2)).is_err());
}

#[test]
fn ssim_below_one_for_distinct_images() {
    let x = random(14, 14, 8);
    let y = &x + &random(14, 14, 9).mapv(|v| 0.2 * v);
    let s = ssim(&y, &x).unwrap();
    assert!(s < 1.0 && s > 0.0);
}

#[test]
fn report_and_mean() {
    let x = random(12, 12, 10);
    let y = random(12, 12, 11);
    let r = MetricReport::compute(&y, &x).unwrap();
    assert!(r.nmse >= 0.0 && r.ssim <= 1.0 && r.psnr.is_finite());
    let id = MetricReport::compute(&x, &x).unwrap();
    let m = MetricReport::mean(&[r, id]).unwrap();
    assert_eq!(m.psnr, r.psnr);
    assert!(MetricReport::mean(&[]).is_none());
}
