//! Complex-valued operators of the forward model as autodiff nodes.
//!
//! Tensors are `[B, 2, H, W]` with the real part in channel 0. Gradients of a
//! real loss are carried in the same layout, as `∂L/∂re + i·∂L/∂im`; for a
//! complex-linear map the backward pass is then its adjoint.

use qmri_core::mri_ops::{fft2c_in_place, Direction, C64};
use qmri_nn::{Graph, Tensor, Var};

use crate::error::{ReconError, Result};

fn complex_dims(g: &Graph, x: Var, what: &str) -> Result<[usize; 4]> {
    let d = g.value(x).dims4()?;
    if d[1] != 2 {
        return Err(ReconError::Shape(format!("{what}: expected 2 channels, got {:?}", g.shape(x))));
    }
    Ok(d)
}

fn transform(data: &[f64], b: usize, h: usize, w: usize, dir: Direction) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; data.len()];
    let mut buf = vec![C64::new(0.0, 0.0); hw];
    for n in 0..b {
        let base = n * 2 * hw;
        for (k, v) in buf.iter_mut().enumerate() {
            *v = C64::new(data[base + k], data[base + hw + k]);
        }
        fft2c_in_place(&mut buf, h, w, dir);
        for (k, v) in buf.iter().enumerate() {
            out[base + k] = v.re;
            out[base + hw + k] = v.im;
        }
    }
    out
}

fn inverse(dir: Direction) -> Direction {
    match dir {
        Direction::Forward => Direction::Inverse,
        Direction::Inverse => Direction::Forward,
    }
}

/// Centered orthonormal 2-D DFT of every batch entry.
pub fn fft(g: &mut Graph, x: Var, dir: Direction) -> Result<Var> {
    let [b, _, h, w] = complex_dims(g, x, "fft")?;
    let out = transform(g.value(x).data(), b, h, w, dir);
    let value = Tensor::new(g.shape(x).to_vec(), out)?;
    let back = inverse(dir);
    Ok(g.custom(&[x], value, Box::new(move |ctx| vec![Some(transform(ctx.grad, b, h, w, back))])))
}

#[inline]
fn at(d: &[f64], hw: usize, n: usize, k: usize) -> C64 {
    let base = n * 2 * hw;
    C64::new(d[base + k], d[base + hw + k])
}

#[inline]
fn put(d: &mut [f64], hw: usize, n: usize, k: usize, v: C64) {
    let base = n * 2 * hw;
    d[base + k] = v.re;
    d[base + hw + k] = v.im;
}

fn check_pair(g: &Graph, x: Var, s: Var, what: &str) -> Result<([usize; 4], [usize; 4])> {
    let dx = complex_dims(g, x, what)?;
    let ds = complex_dims(g, s, what)?;
    if dx[2..] != ds[2..] {
        return Err(ReconError::Shape(format!("{what}: {:?} vs sensitivities {:?}", g.shape(x), g.shape(s))));
    }
    Ok((dx, ds))
}

/// Coil expansion: `[k_t, 2, H, W]` images times `[n_c, 2, H, W]` maps gives
/// `[k_t·n_c, 2, H, W]` coil images, baseline-major.
pub fn expand(g: &mut Graph, x: Var, s: Var) -> Result<Var> {
    let ([k_t, _, h, w], [n_c, ..]) = check_pair(g, x, s, "expand")?;
    let hw = h * w;
    let (xv, sv) = (g.value(x).data(), g.value(s).data());
    let mut out = vec![0.0; k_t * n_c * 2 * hw];
    for t in 0..k_t {
        for c in 0..n_c {
            for k in 0..hw {
                put(&mut out, hw, t * n_c + c, k, at(sv, hw, c, k) * at(xv, hw, t, k));
            }
        }
    }
    let value = Tensor::new(vec![k_t * n_c, 2, h, w], out)?;
    Ok(g.custom(
        &[x, s],
        value,
        Box::new(move |ctx| {
            let (xv, sv, gy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![0.0; k_t * 2 * hw];
                for t in 0..k_t {
                    for k in 0..hw {
                        let acc: C64 = (0..n_c).map(|c| at(sv, hw, c, k).conj() * at(gy, hw, t * n_c + c, k)).sum();
                        put(&mut gx, hw, t, k, acc);
                    }
                }
                gx
            });
            let gs = ctx.needs[1].then(|| {
                let mut gs = vec![0.0; n_c * 2 * hw];
                for c in 0..n_c {
                    for k in 0..hw {
                        let acc: C64 = (0..k_t).map(|t| at(xv, hw, t, k).conj() * at(gy, hw, t * n_c + c, k)).sum();
                        put(&mut gs, hw, c, k, acc);
                    }
                }
                gs
            });
            vec![gx, gs]
        }),
    ))
}

/// Coil combination `Σ_c conj(s_c)·y_c`: `[k_t·n_c, 2, H, W]` to `[k_t, 2, H, W]`.
pub fn reduce(g: &mut Graph, y: Var, s: Var) -> Result<Var> {
    let ([b, _, h, w], [n_c, ..]) = check_pair(g, y, s, "reduce")?;
    if n_c == 0 || b % n_c != 0 {
        return Err(ReconError::Shape(format!("reduce: batch {b} is not a multiple of {n_c} coils")));
    }
    let k_t = b / n_c;
    let hw = h * w;
    let (yv, sv) = (g.value(y).data(), g.value(s).data());
    let mut out = vec![0.0; k_t * 2 * hw];
    for t in 0..k_t {
        for k in 0..hw {
            let acc: C64 = (0..n_c).map(|c| at(sv, hw, c, k).conj() * at(yv, hw, t * n_c + c, k)).sum();
            put(&mut out, hw, t, k, acc);
        }
    }
    let value = Tensor::new(vec![k_t, 2, h, w], out)?;
    Ok(g.custom(
        &[y, s],
        value,
        Box::new(move |ctx| {
            let (yv, sv, gx) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad);
            let gy = ctx.needs[0].then(|| {
                let mut gy = vec![0.0; b * 2 * hw];
                for t in 0..k_t {
                    for c in 0..n_c {
                        for k in 0..hw {
                            put(&mut gy, hw, t * n_c + c, k, at(sv, hw, c, k) * at(gx, hw, t, k));
                        }
                    }
                }
                gy
            });
            let gs = ctx.needs[1].then(|| {
                let mut gs = vec![0.0; n_c * 2 * hw];
                for c in 0..n_c {
                    for k in 0..hw {
                        let acc: C64 = (0..k_t).map(|t| at(yv, hw, t * n_c + c, k) * at(gx, hw, t, k).conj()).sum();
                        put(&mut gs, hw, c, k, acc);
                    }
                }
                gs
            });
            vec![gy, gs]
        }),
    ))
}

fn check_lines(g: &Graph, x: Var, lines: &[bool]) -> Result<[usize; 4]> {
    let d = complex_dims(g, x, "mask")?;
    if lines.len() != d[3] {
        return Err(ReconError::Shape(format!("mask has {} lines, k-space has {}", lines.len(), d[3])));
    }
    Ok(d)
}

fn zero_unsampled(data: &mut [f64], w: usize, lines: &[bool]) {
    for (i, v) in data.iter_mut().enumerate() {
        if !lines[i % w] {
            *v = 0.0;
        }
    }
}

/// Zeroes the phase-encode columns (last axis) that are not sampled.
pub fn mask_lines(g: &mut Graph, x: Var, lines: &[bool]) -> Result<Var> {
    let [.., w] = check_lines(g, x, lines)?;
    let mut out = g.value(x).data().to_vec();
    zero_unsampled(&mut out, w, lines);
    let value = Tensor::new(g.shape(x).to_vec(), out)?;
    let lines = lines.to_vec();
    Ok(g.custom(
        &[x],
        value,
        Box::new(move |ctx| {
            let mut gx = ctx.grad.to_vec();
            zero_unsampled(&mut gx, w, &lines);
            vec![Some(gx)]
        }),
    ))
}

/// The data-consistency part of the unrolled update, `ŷ − α·U(ŷ − y)`, with
/// `y` a constant measurement. Sampled entries are formed as `(1−α)·ŷ + α·y`,
/// which is algebraically the same and returns `y` exactly when `α = 1`.
pub fn data_consistency(g: &mut Graph, yhat: Var, y: &Tensor, alpha: Var, lines: &[bool]) -> Result<Var> {
    let [.., w] = check_lines(g, yhat, lines)?;
    if g.shape(yhat) != y.shape() {
        return Err(ReconError::Shape(format!("iterate {:?} vs measurement {:?}", g.shape(yhat), y.shape())));
    }
    if g.value(alpha).len() != 1 {
        return Err(ReconError::Shape("step size must be a single scalar".into()));
    }
    let a = g.value(alpha).item();
    let out: Vec<f64> = g
        .value(yhat)
        .data()
        .iter()
        .zip(y.data())
        .enumerate()
        .map(|(i, (&p, &m))| if lines[i % w] { (1.0 - a) * p + a * m } else { p })
        .collect();
    let value = Tensor::new(y.shape().to_vec(), out)?;
    let lines = lines.to_vec();
    let meas = y.data().to_vec();
    Ok(g.custom(
        &[yhat, alpha],
        value,
        Box::new(move |ctx| {
            let p = ctx.inputs[0].data();
            let a = ctx.inputs[1].item();
            let gy = ctx.grad;
            let g_hat = ctx.needs[0]
                .then(|| gy.iter().enumerate().map(|(i, &v)| if lines[i % w] { (1.0 - a) * v } else { v }).collect());
            let g_alpha = ctx.needs[1].then(|| {
                let s: f64 = (0..gy.len()).filter(|i| lines[i % w]).map(|i| gy[i] * (meas[i] - p[i])).sum();
                vec![s]
            });
            vec![g_hat, g_alpha]
        }),
    ))
}

/// Floor inside the magnitude square root, so the gradient at 0 stays finite.
pub const CABS_EPS: f64 = 1e-24;

/// Complex magnitude: `[B, 2, H, W]` to `[B, 1, H, W]`.
pub fn cabs(g: &mut Graph, x: Var) -> Result<Var> {
    let [b, _, h, w] = complex_dims(g, x, "cabs")?;
    let hw = h * w;
    let xv = g.value(x).data();
    let mut out = vec![0.0; b * hw];
    for n in 0..b {
        for k in 0..hw {
            let v = at(xv, hw, n, k);
            out[n * hw + k] = (v.norm_sqr() + CABS_EPS).sqrt();
        }
    }
    let value = Tensor::new(vec![b, 1, h, w], out)?;
    Ok(g.custom(
        &[x],
        value,
        Box::new(move |ctx| {
            let (xv, r) = (ctx.inputs[0].data(), ctx.output.data());
            let mut gx = vec![0.0; b * 2 * hw];
            for n in 0..b {
                for k in 0..hw {
                    let v = at(xv, hw, n, k);
                    let s = ctx.grad[n * hw + k] / r[n * hw + k];
                    put(&mut gx, hw, n, k, v * s);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Divides `[n_c, 2, H, W]` maps by their voxelwise RSS on `support`
/// (row-major `H·W` flags) and zeroes them elsewhere.
pub fn normalize_rss(g: &mut Graph, s: Var, support: &[bool]) -> Result<Var> {
    let [n_c, _, h, w] = complex_dims(g, s, "normalize_rss")?;
    let hw = h * w;
    if support.len() != hw {
        return Err(ReconError::Shape(format!("support has {} voxels, maps {hw}", support.len())));
    }
    let sv = g.value(s).data();
    let rss: Vec<f64> = (0..hw).map(|k| (0..n_c).map(|c| at(sv, hw, c, k).norm_sqr()).sum::<f64>().sqrt()).collect();
    let inside: Vec<bool> = support.iter().zip(&rss).map(|(&m, &r)| m && r > 0.0).collect();
    let mut out = vec![0.0; n_c * 2 * hw];
    for c in 0..n_c {
        for k in 0..hw {
            if inside[k] {
                put(&mut out, hw, c, k, at(sv, hw, c, k) / rss[k]);
            }
        }
    }
    let value = Tensor::new(vec![n_c, 2, h, w], out)?;
    Ok(g.custom(
        &[s],
        value,
        Box::new(move |ctx| {
            let (sv, gy) = (ctx.inputs[0].data(), ctx.grad);
            let mut gs = vec![0.0; n_c * 2 * hw];
            for k in 0..hw {
                if !inside[k] {
                    continue;
                }
                let r = rss[k];
                let dot: f64 = (0..n_c)
                    .map(|c| {
                        let (a, b) = (at(sv, hw, c, k), at(gy, hw, c, k));
                        a.re * b.re + a.im * b.im
                    })
                    .sum();
                for c in 0..n_c {
                    let v = at(gy, hw, c, k) / r - at(sv, hw, c, k) * (dot / (r * r * r));
                    put(&mut gs, hw, c, k, v);
                }
            }
            vec![Some(gs)]
        }),
    ))
}
