use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mri_ops::{SensitivityMaps, C64};

/// Generator settings for [`simulate_coils`], relative to the grid size `n = max(nx, ny)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoilParams {
    /// Lobe width σ as a fraction of `n`.
    pub width: f64,
    /// Radius of the circle of lobe centers as a fraction of `n`.
    pub radius: f64,
    /// Max linear phase slope per axis, rad per pixel.
    pub max_phase_slope: f64,
}

impl Default for CoilParams {
    fn default() -> Self {
        Self { width: 0.5, radius: 0.55, max_phase_slope: 0.05 }
    }
}

impl CoilParams {
    /// Upper bound on `|S_c(p) − S_c(q)|` for grid neighbours `p, q`.
    ///
    /// The normalized magnitude `m_c = g_c/√Σg²` has `|∇m_c| ≤ 2D/σ²`, where
    /// `D` bounds the distance of any pixel to any lobe center, and the phase
    /// factor adds `|∇φ| ≤ √2·max_phase_slope`.
    pub fn smoothness_bound(&self, nx: usize, ny: usize) -> f64 {
        let n = nx.max(ny) as f64;
        let sigma = self.width * n;
        let d = ((nx * nx + ny * ny) as f64).sqrt() / 2.0 + self.radius * n;
        2.0 * d / (sigma * sigma) + std::f64::consts::SQRT_2 * self.max_phase_slope
    }
}

/// Gaussian magnitude lobes centered on a circle around the grid center at
/// equal angular spacing (seeded rotation), each with a seeded linear phase,
/// normalized to unit RSS everywhere. One coil gives the constant map 1.
pub fn simulate_coils(n_coils: usize, nx: usize, ny: usize, seed: u64) -> SensitivityMaps {
    simulate_coils_with(n_coils, nx, ny, seed, &CoilParams::default())
}

pub fn simulate_coils_with(n_coils: usize, nx: usize, ny: usize, seed: u64, params: &CoilParams) -> SensitivityMaps {
    assert!(n_coils >= 1, "at least one coil");
    if n_coils == 1 {
        return SensitivityMaps::unit(nx, ny);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = nx.max(ny) as f64;
    let sigma = params.width * n;
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let rot = rng.random_range(0.0..std::f64::consts::TAU);
    let s = params.max_phase_slope;
    let lobes: Vec<(f64, f64, f64, f64, f64)> = (0..n_coils)
        .map(|c| {
            let ang = rot + std::f64::consts::TAU * c as f64 / n_coils as f64;
            let px = cx + params.radius * n * ang.cos();
            let py = cy + params.radius * n * ang.sin();
            (px, py, rng.random_range(-s..=s), rng.random_range(-s..=s), rng.random_range(-3.14..3.14))
        })
        .collect();
    let mut maps = Array3::from_shape_fn((n_coils, nx, ny), |(c, i, j)| {
        let (px, py, gx, gy, p0) = lobes[c];
        let (x, y) = (i as f64, j as f64);
        let mag = (-((x - px).powi(2) + (y - py).powi(2)) / (2.0 * sigma * sigma)).exp();
        C64::from_polar(mag, p0 + gx * (x - cx) + gy * (y - cy))
    });
    for i in 0..nx {
        for j in 0..ny {
            let r = (0..n_coils).map(|c| maps[[c, i, j]].norm_sqr()).sum::<f64>().sqrt();
            for c in 0..n_coils {
                maps[[c, i, j]] /= r;
            }
        }
    }
    SensitivityMaps::new(maps).expect("finite maps")
}
