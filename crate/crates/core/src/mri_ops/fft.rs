//! Centered, orthonormal 2-D DFT. The DC term sits at index `floor(k/2)` on
//! both sides of the transform, and both directions scale by `1/sqrt(N)`.

use std::cell::RefCell;

use ndarray::{Array2, Array3};
use rustfft::{FftDirection, FftPlanner};

use super::types::{ComplexImage, MultiCoil, C64};
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Moves index `floor(n/2)` to 0 along both axes.
fn ifftshift(src: &[C64], dst: &mut [C64], nx: usize, ny: usize) {
    let (cx, cy) = (nx / 2, ny / 2);
    for i in 0..nx {
        let si = (i + cx) % nx;
        for j in 0..ny {
            dst[i * ny + j] = src[si * ny + (j + cy) % ny];
        }
    }
}

/// Moves index 0 to `floor(n/2)` along both axes.
fn fftshift(src: &[C64], dst: &mut [C64], nx: usize, ny: usize) {
    let (cx, cy) = (nx / 2, ny / 2);
    for i in 0..nx {
        let di = (i + cx) % nx;
        for j in 0..ny {
            dst[di * ny + (j + cy) % ny] = src[i * ny + j];
        }
    }
}

/// Centered orthonormal transform of a row-major `nx × ny` buffer, in place.
pub fn fft2c_in_place(buf: &mut [C64], nx: usize, ny: usize, direction: Direction) {
    assert_eq!(buf.len(), nx * ny);
    if buf.is_empty() {
        return;
    }
    let dir = match direction {
        Direction::Forward => FftDirection::Forward,
        Direction::Inverse => FftDirection::Inverse,
    };
    let (row_fft, col_fft) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft(ny, dir), p.plan_fft(nx, dir))
    });
    let mut work = vec![C64::new(0.0, 0.0); nx * ny];
    ifftshift(buf, &mut work, nx, ny);

    row_fft.process(&mut work);
    let mut column = vec![C64::new(0.0, 0.0); nx];
    for j in 0..ny {
        for i in 0..nx {
            column[i] = work[i * ny + j];
        }
        col_fft.process(&mut column);
        for i in 0..nx {
            work[i * ny + j] = column[i];
        }
    }

    fftshift(&work, buf, nx, ny);
    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
}

fn transform(img: &ComplexImage, direction: Direction) -> Result<ComplexImage> {
    let (nx, ny) = img.shape();
    let mut buf: Vec<C64> = img.data().iter().copied().collect();
    fft2c_in_place(&mut buf, nx, ny, direction);
    ComplexImage::new(Array2::from_shape_vec((nx, ny), buf).expect("shape preserved"))
}

/// Image → k-space.
pub fn fft2c(img: &ComplexImage) -> Result<ComplexImage> {
    transform(img, Direction::Forward)
}

/// k-space → image.
pub fn ifft2c(ksp: &ComplexImage) -> Result<ComplexImage> {
    transform(ksp, Direction::Inverse)
}

/// Applies the transform to every coil.
pub fn fft2c_coils(data: &MultiCoil, direction: Direction) -> Result<MultiCoil> {
    let (nx, ny) = data.image_shape();
    let mut out = Array3::zeros(data.data().dim());
    for (src, mut dst) in data.data().outer_iter().zip(out.outer_iter_mut()) {
        let mut buf: Vec<C64> = src.iter().copied().collect();
        fft2c_in_place(&mut buf, nx, ny, direction);
        dst.assign(&Array2::from_shape_vec((nx, ny), buf).expect("shape preserved"));
    }
    MultiCoil::new(out)
}
