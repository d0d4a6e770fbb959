use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

fn check_finite<'a>(values: impl IntoIterator<Item = &'a C64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Single-slice complex image (or single-coil k-space) of shape `(k_x, k_y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    data: Array2<C64>,
}

impl ComplexImage {
    /// Rejects NaN/Inf entries.
    pub fn new(data: Array2<C64>) -> Result<Self> {
        check_finite(data.iter(), "complex image")?;
        Ok(Self { data })
    }

    pub fn zeros(kx: usize, ky: usize) -> Self {
        Self { data: Array2::zeros((kx, ky)) }
    }

    pub fn from_real(data: &Array2<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| C64::new(v, 0.0)))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<C64> {
        self.data
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `Σ conj(self) · other`.
    pub fn inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a.conj() * b).sum()
    }
}

/// `n_c` complex images of shape `(k_x, k_y)` stacked along axis 0. Used both
/// for coil images and for multi-coil k-space.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoil {
    data: Array3<C64>,
}

/// Multi-coil frequency-domain samples `(n_c, k_x, k_y)`.
pub type MultiCoilKSpace = MultiCoil;
/// Multi-coil image-domain data `(n_c, k_x, k_y)`.
pub type CoilImages = MultiCoil;

impl MultiCoil {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        if data.dim().0 == 0 {
            return Err(Error::Shape("multi-coil data needs at least one coil".into()));
        }
        check_finite(data.iter(), "multi-coil data")?;
        Ok(Self { data })
    }

    pub fn zeros(n_coils: usize, kx: usize, ky: usize) -> Self {
        Self { data: Array3::zeros((n_coils.max(1), kx, ky)) }
    }

    /// Coils are taken from `images` in order.
    pub fn from_coils(images: &[ComplexImage]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::Shape("no coil images".into()))?;
        let (kx, ky) = first.shape();
        let mut data = Array3::zeros((images.len(), kx, ky));
        for (c, img) in images.iter().enumerate() {
            if img.shape() != (kx, ky) {
                return Err(Error::Shape(format!("coil {c} has shape {:?}, expected {:?}", img.shape(), (kx, ky))));
            }
            data.index_axis_mut(Axis(0), c).assign(img.data());
        }
        Ok(Self { data })
    }

    pub fn n_coils(&self) -> usize {
        self.data.dim().0
    }

    /// `(k_x, k_y)`.
    pub fn image_shape(&self) -> (usize, usize) {
        let (_, kx, ky) = self.data.dim();
        (kx, ky)
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<C64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> ArrayView2<'_, C64> {
        self.data.index_axis(Axis(0), c)
    }

    pub fn coil_image(&self, c: usize) -> ComplexImage {
        ComplexImage { data: self.coil(c).to_owned() }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.data.iter().zip(other.data.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub(crate) fn from_raw(data: Array3<C64>) -> Self {
        Self { data }
    }
}

/// Per-coil complex sensitivities `(n_c, k_x, k_y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    maps: Array3<C64>,
}

impl SensitivityMaps {
    pub fn new(maps: Array3<C64>) -> Result<Self> {
        if maps.dim().0 == 0 {
            return Err(Error::Shape("sensitivity maps need at least one coil".into()));
        }
        check_finite(maps.iter(), "sensitivity maps")?;
        Ok(Self { maps })
    }

    /// Single coil with unit sensitivity everywhere.
    pub fn unit(kx: usize, ky: usize) -> Self {
        Self { maps: Array3::from_elem((1, kx, ky), C64::new(1.0, 0.0)) }
    }

    pub fn n_coils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn image_shape(&self) -> (usize, usize) {
        let (_, kx, ky) = self.maps.dim();
        (kx, ky)
    }

    pub fn maps(&self) -> &Array3<C64> {
        &self.maps
    }

    pub fn into_inner(self) -> Array3<C64> {
        self.maps
    }

    /// Voxelwise root-sum-of-squares over coils.
    pub fn rss(&self) -> Array2<f64> {
        self.maps.map(|v| v.norm_sqr()).sum_axis(Axis(0)).mapv(f64::sqrt)
    }

    /// Divides by the voxelwise RSS where it exceeds `rel_eps · max(RSS)`;
    /// zeroes the remaining voxels.
    pub fn normalized(&self, rel_eps: f64) -> Self {
        let rss = self.rss();
        let max = rss.iter().copied().fold(0.0, f64::max);
        let thresh = rel_eps * max;
        let mut maps = self.maps.clone();
        for mut coil in maps.outer_iter_mut() {
            ndarray::Zip::from(&mut coil).and(&rss).for_each(|s, &r| {
                *s = if r > thresh && r > 0.0 { *s / r } else { C64::new(0.0, 0.0) };
            });
        }
        Self { maps }
    }
}

/// Cartesian phase-encoding line mask along `k_y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    lines: Vec<bool>,
    acs_width: usize,
    acceleration: usize,
}

/// Indices of the `acs_width` centre lines of a `ky`-line grid.
pub fn acs_range(ky: usize, acs_width: usize) -> std::ops::Range<usize> {
    let start = (ky / 2).saturating_sub(acs_width / 2);
    start..(start + acs_width).min(ky)
}

impl SamplingMask {
    /// Rejects masks whose ACS lines are not all sampled.
    pub fn new(lines: Vec<bool>, acs_width: usize, acceleration: usize) -> Result<Self> {
        if acs_width > lines.len() {
            return Err(Error::InvalidArgument(format!("ACS width {acs_width} exceeds {} lines", lines.len())));
        }
        if !lines[acs_range(lines.len(), acs_width)].iter().all(|&b| b) {
            return Err(Error::InvalidArgument("ACS lines must all be sampled".into()));
        }
        Ok(Self { lines, acs_width, acceleration })
    }

    /// Every line sampled.
    pub fn full(ky: usize) -> Self {
        Self { lines: vec![true; ky], acs_width: ky, acceleration: 1 }
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn acs_width(&self) -> usize {
        self.acs_width
    }

    /// Nominal acceleration factor R.
    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn sampled_count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// `k_y / #sampled`.
    pub fn effective_acceleration(&self) -> f64 {
        self.lines.len() as f64 / self.sampled_count().max(1) as f64
    }

    /// The auto-calibration region alone.
    pub fn acs_only(&self) -> Self {
        let range = acs_range(self.lines.len(), self.acs_width);
        let lines = (0..self.lines.len()).map(|j| range.contains(&j)).collect();
        Self { lines, acs_width: self.acs_width, acceleration: self.acceleration }
    }
}
