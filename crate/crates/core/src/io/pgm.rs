use std::path::Path;

use ndarray::Array2;

use super::container::write_atomic;
use crate::error::Result;
use crate::stats::percentile;

/// Binary 8-bit PGM. Values map linearly from `[0, p99]` to `[0, 255]` and
/// are clipped; rows of the array become image rows.
pub fn pgm_bytes(img: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = img.dim();
    let hi = percentile(img.iter().copied(), 0.99);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(img.iter().map(|&v| {
        if !(hi > 0.0) || !v.is_finite() {
            0
        } else {
            (v / hi * 255.0).round().clamp(0.0, 255.0) as u8
        }
    }));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Array2<f64>) -> Result<()> {
    write_atomic(path.as_ref(), &pgm_bytes(img))
}
