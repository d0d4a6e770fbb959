//! Conversions between the array types of the operator layer and the
//! `[batch, channel, row, col]` tensors of the autodiff graph. Complex data
//! uses two channels, real then imaginary.

use ndarray::{Array2, Array3};
use qmri_core::mri_ops::{ComplexImage, MultiCoil, SensitivityMaps, C64};
use qmri_nn::Tensor;

use crate::error::{ReconError, Result};

fn push_complex<'a>(out: &mut Vec<f64>, values: impl Iterator<Item = &'a C64> + Clone) {
    out.extend(values.clone().map(|v| v.re));
    out.extend(values.map(|v| v.im));
}

fn check_uniform(shapes: impl Iterator<Item = (usize, usize)>) -> Result<(usize, usize, usize)> {
    let mut first = None;
    let mut n = 0;
    for s in shapes {
        match first {
            None => first = Some(s),
            Some(f) if f != s => return Err(ReconError::Shape(format!("{f:?} vs {s:?}"))),
            _ => {}
        }
        n += 1;
    }
    let (h, w) = first.ok_or_else(|| ReconError::InvalidArgument("empty stack".into()))?;
    Ok((n, h, w))
}

/// `[k_t, 2, H, W]`, each entry divided by `scale`.
pub fn images_to_tensor(images: &[ComplexImage], scale: f64) -> Result<Tensor> {
    let (n, h, w) = check_uniform(images.iter().map(ComplexImage::shape))?;
    let mut data = Vec::with_capacity(n * 2 * h * w);
    for img in images {
        push_complex(&mut data, img.data().iter());
    }
    scale_in_place(&mut data, scale);
    Ok(Tensor::new(vec![n, 2, h, w], data)?)
}

/// Inverse of [`images_to_tensor`].
pub fn tensor_to_images(t: &Tensor, scale: f64) -> Result<Vec<ComplexImage>> {
    let [n, c, h, w] = t.dims4()?;
    if c != 2 {
        return Err(ReconError::Shape(format!("expected 2 channels, got {c}")));
    }
    let hw = h * w;
    (0..n)
        .map(|b| {
            let base = b * 2 * hw;
            let d = t.data();
            let arr = Array2::from_shape_fn((h, w), |(i, j)| {
                let k = i * w + j;
                C64::new(d[base + k], d[base + hw + k]) * scale
            });
            Ok(ComplexImage::new(arr)?)
        })
        .collect()
}

/// `[k_t·n_c, 2, H, W]` in baseline-major order.
pub fn coils_to_tensor(stack: &[MultiCoil], scale: f64) -> Result<Tensor> {
    let (k_t, h, w) = check_uniform(stack.iter().map(MultiCoil::image_shape))?;
    let n_c = stack[0].n_coils();
    if stack.iter().any(|m| m.n_coils() != n_c) {
        return Err(ReconError::Shape("baselines differ in coil count".into()));
    }
    let mut data = Vec::with_capacity(k_t * n_c * 2 * h * w);
    for m in stack {
        for c in 0..n_c {
            push_complex(&mut data, m.coil(c).iter());
        }
    }
    scale_in_place(&mut data, scale);
    Ok(Tensor::new(vec![k_t * n_c, 2, h, w], data)?)
}

/// Inverse of [`coils_to_tensor`].
pub fn tensor_to_coils(t: &Tensor, n_c: usize, scale: f64) -> Result<Vec<MultiCoil>> {
    let [b, c, h, w] = t.dims4()?;
    if c != 2 || n_c == 0 || b % n_c != 0 {
        return Err(ReconError::Shape(format!("cannot split {:?} into {n_c} coils", t.shape())));
    }
    let hw = h * w;
    let d = t.data();
    (0..b / n_c)
        .map(|k| {
            let arr = Array3::from_shape_fn((n_c, h, w), |(ci, i, j)| {
                let base = (k * n_c + ci) * 2 * hw;
                let p = i * w + j;
                C64::new(d[base + p], d[base + hw + p]) * scale
            });
            Ok(MultiCoil::new(arr)?)
        })
        .collect()
}

/// `[n_c, 2, H, W]`.
pub fn sens_to_tensor(s: &SensitivityMaps) -> Result<Tensor> {
    let (h, w) = s.image_shape();
    let n_c = s.n_coils();
    let mut data = Vec::with_capacity(n_c * 2 * h * w);
    for c in 0..n_c {
        push_complex(&mut data, s.maps().index_axis(ndarray::Axis(0), c).iter());
    }
    Ok(Tensor::new(vec![n_c, 2, h, w], data)?)
}

pub fn tensor_to_sens(t: &Tensor) -> Result<SensitivityMaps> {
    let [n_c, c, h, w] = t.dims4()?;
    if c != 2 {
        return Err(ReconError::Shape(format!("expected 2 channels, got {c}")));
    }
    let hw = h * w;
    let d = t.data();
    let arr = Array3::from_shape_fn((n_c, h, w), |(ci, i, j)| {
        let p = i * w + j;
        C64::new(d[ci * 2 * hw + p], d[ci * 2 * hw + hw + p])
    });
    Ok(SensitivityMaps::new(arr)?)
}

/// Magnitude stack as `[1, k_t, H, W]`, divided by `scale`.
pub fn mags_to_tensor(stack: &[Array2<f64>], scale: f64) -> Result<Tensor> {
    let (n, h, w) = check_uniform(stack.iter().map(Array2::dim))?;
    let mut data = Vec::with_capacity(n * h * w);
    for m in stack {
        data.extend(m.iter().copied());
    }
    scale_in_place(&mut data, scale);
    Ok(Tensor::new(vec![1, n, h, w], data)?)
}

/// Splits the channels of a `[1, C, H, W]` tensor into images, times `scale`.
pub fn tensor_to_mags(t: &Tensor, scale: f64) -> Result<Vec<Array2<f64>>> {
    let [b, c, h, w] = t.dims4()?;
    if b != 1 {
        return Err(ReconError::Shape(format!("expected batch 1, got {b}")));
    }
    let hw = h * w;
    Ok((0..c)
        .map(|k| {
            let v: Vec<f64> = t.data()[k * hw..(k + 1) * hw].iter().map(|x| x * scale).collect();
            Array2::from_shape_vec((h, w), v).expect("sized")
        })
        .collect())
}

fn scale_in_place(data: &mut [f64], scale: f64) {
    if scale != 1.0 {
        let inv = 1.0 / scale;
        for v in data {
            *v *= inv;
        }
    }
}
