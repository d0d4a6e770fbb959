use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mri_ops::{MultiCoil, C64};

/// Ranges of the random geometric augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub probability: f64,
    /// Rotation drawn from ±this, degrees.
    pub rotation_deg: f64,
    /// Translation drawn from ±this fraction of the grid size, per axis.
    pub translation: f64,
    pub shear_deg: f64,
    /// Random vertical and horizontal flips, each with probability 1/2.
    pub flip: bool,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { probability: 0.4, rotation_deg: 45.0, translation: 0.1, shear_deg: 20.0, flip: true }
    }
}

impl AugmentParams {
    pub fn disabled() -> Self {
        Self { probability: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.probability)
            && (0.0..=180.0).contains(&self.rotation_deg)
            && (0.0..1.0).contains(&self.translation)
            && (0.0..90.0).contains(&self.shear_deg);
        if !ok {
            return Err(Error::InvalidArgument(format!("augmentation ranges out of bounds: {self:?}")));
        }
        Ok(())
    }
}

/// `p ↦ M·(p − c) + c + t` around the grid center `c`, in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub matrix: [[f64; 2]; 2],
    pub shift: [f64; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self { matrix: [[1.0, 0.0], [0.0, 1.0]], shift: [0.0, 0.0] }
    }

    pub fn rotation(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Self { matrix: [[c, -s], [s, c]], shift: [0.0, 0.0] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { shift: [dx, dy], ..Self::identity() }
    }

    pub fn shear(deg: f64) -> Self {
        Self { matrix: [[1.0, deg.to_radians().tan()], [0.0, 1.0]], shift: [0.0, 0.0] }
    }

    pub fn flip(vertical: bool, horizontal: bool) -> Self {
        let f = |b: bool| if b { -1.0 } else { 1.0 };
        Self { matrix: [[f(vertical), 0.0], [0.0, f(horizontal)]], shift: [0.0, 0.0] }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn then_after(&self, other: &Self) -> Self {
        let (a, b) = (self.matrix, other.matrix);
        let mut m = [[0.0; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let t = [
            a[0][0] * other.shift[0] + a[0][1] * other.shift[1] + self.shift[0],
            a[1][0] * other.shift[0] + a[1][1] * other.shift[1] + self.shift[1],
        ];
        Self { matrix: m, shift: t }
    }

    /// Draws a transform, or `None` (identity) with probability `1 − p`.
    pub fn sample(params: &AugmentParams, nx: usize, ny: usize, rng: &mut impl Rng) -> Option<Self> {
        if params.probability <= 0.0 || !rng.random_bool(params.probability.min(1.0)) {
            return None;
        }
        let sym = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let rot = Self::rotation(sym(rng, params.rotation_deg));
        let shear = Self::shear(sym(rng, params.shear_deg));
        let (fv, fh) = if params.flip { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
        let flip = Self::flip(fv, fh);
        let tr = Self::translation(sym(rng, params.translation) * nx as f64, sym(rng, params.translation) * ny as f64);
        Some(tr.then_after(&rot.then_after(&shear.then_after(&flip))))
    }

    /// Source coordinate in the input for output pixel `(i, j)`.
    fn source(&self, i: f64, j: f64, c: [f64; 2]) -> Option<(f64, f64)> {
        let m = self.matrix;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return None;
        }
        let (u, v) = (i - c[0] - self.shift[0], j - c[1] - self.shift[1]);
        Some(((m[1][1] * u - m[0][1] * v) / det + c[0], (-m[1][0] * u + m[0][0] * v) / det + c[1]))
    }

    fn warp<T, F>(&self, nx: usize, ny: usize, zero: T, sample: F) -> Array2<T>
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
        F: Fn(usize, usize) -> T,
    {
        let c = [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0];
        Array2::from_shape_fn((nx, ny), |(i, j)| {
            let Some((x, y)) = self.source(i as f64, j as f64, c) else { return zero };
            // snap coordinates that are integral up to roundoff so exact shifts stay exact
            let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
            let (x, y) = (snap(x), snap(y));
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            let mut acc = zero;
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    let w = wx * wy;
                    if w == 0.0 {
                        continue;
                    }
                    let (xi, yi) = (x0 + dx, y0 + dy);
                    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < nx && (yi as usize) < ny {
                        acc = acc + sample(xi as usize, yi as usize) * w;
                    }
                }
            }
            acc
        })
    }

    /// Bilinear resampling with zero fill outside the grid.
    pub fn apply_real(&self, img: &Array2<f64>) -> Array2<f64> {
        let (nx, ny) = img.dim();
        self.warp(nx, ny, 0.0, |i, j| img[[i, j]])
    }

    /// Bilinear resampling of real and imaginary parts.
    pub fn apply_complex(&self, img: &Array2<C64>) -> Array2<C64> {
        let (nx, ny) = img.dim();
        self.warp(nx, ny, C64::new(0.0, 0.0), |i, j| img[[i, j]])
    }

    pub fn apply_coils(&self, coils: &MultiCoil) -> MultiCoil {
        let mut out = coils.data().clone();
        for c in 0..coils.n_coils() {
            let warped = self.apply_complex(&coils.coil(c).to_owned());
            out.index_axis_mut(ndarray::Axis(0), c).assign(&warped);
        }
        MultiCoil::new(out).expect("bilinear combination of finite values")
    }
}

/// With probability `params.probability`, applies one random affine transform
/// to every coil image of every baseline. Returns the transform used, so
/// targets and parameter maps can follow it.
pub fn augment(
    stack: &[MultiCoil],
    params: &AugmentParams,
    seed: u64,
) -> Result<(Vec<MultiCoil>, Option<AffineTransform>)> {
    params.validate()?;
    let Some(first) = stack.first() else { return Ok((Vec::new(), None)) };
    let (nx, ny) = first.image_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match AffineTransform::sample(params, nx, ny, &mut rng) {
        None => Ok((stack.to_vec(), None)),
        Some(t) => Ok((stack.iter().map(|c| t.apply_coils(c)).collect(), Some(t))),
    }
}
