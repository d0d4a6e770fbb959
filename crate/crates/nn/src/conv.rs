//! Spatial operators on NCHW tensors.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// `c (m×n) += a (m×k) · b (k×n)` with optional transposes of the stored operands.
///
/// `a` is stored row-major as `m×k` (or `k×m` when `a_t`), likewise `b`.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the asserted buffer extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one image `[c, h, w]` into `[c·k·k, h·w]` for a same-padded `k×k` kernel.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = k / 2;
    let hw = h * w;
    cols.fill(0.0);
    for ci in 0..c {
        let img = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (x0, x1) = valid_range(w, kx, pad);
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let src = iy as usize * w;
                    let ixs = (x0 as isize + kx as isize - pad as isize) as usize;
                    row[oy * w + x0..oy * w + x1].copy_from_slice(&img[src + ixs..src + ixs + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, x: &mut [f64]) {
    let pad = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let img = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (x0, x1) = valid_range(w, kx, pad);
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let dst = iy as usize * w;
                    let ixs = (x0 as isize + kx as isize - pad as isize) as usize;
                    for (d, s) in img[dst + ixs..dst + ixs + (x1 - x0)].iter_mut().zip(&row[oy * w + x0..oy * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Output columns `x0..x1` whose input column `ox + kx - pad` is in bounds.
fn valid_range(w: usize, kx: usize, pad: usize) -> (usize, usize) {
    let x0 = pad.saturating_sub(kx);
    let x1 = (w + pad).saturating_sub(kx).min(w);
    (x0, x1)
}

impl Graph {
    /// Same-padded 2-D cross-correlation. `w` is `[c_out, c_in, k, k]` with odd `k`,
    /// `b` is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, ci, h, wd] = self.value(x).dims4()?;
        let [co, wci, k, k2] = self.value(w).dims4()?;
        if wci != ci {
            return Err(NnError::Shape(format!("conv2d: input has {ci} channels, kernel expects {wci}")));
        }
        if k != k2 || k % 2 == 0 {
            return Err(NnError::Shape(format!("conv2d: kernel must be odd and square, got {k}×{k2}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(NnError::Shape(format!("conv2d: bias shape {:?}, expected [{co}]", self.shape(b))));
            }
        }
        let hw = h * wd;
        let kk = ci * k * k;
        let mut out = vec![0.0; n * co * hw];
        let mut cols = vec![0.0; kk * hw];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for bi in 0..n {
                im2col(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, wd, k, &mut cols);
                let o = &mut out[bi * co * hw..(bi + 1) * co * hw];
                if let Some(b) = b {
                    for (oc, &bias) in self.value(b).data().iter().enumerate() {
                        o[oc * hw..(oc + 1) * hw].fill(bias);
                    }
                }
                gemm(co, kk, hw, wv, false, &cols, false, o);
            }
        }
        let out = Tensor::new(vec![n, co, h, wd], out)?;
        let inputs: Vec<Var> = std::iter::once(x).chain(std::iter::once(w)).chain(b).collect();
        Ok(self.custom(
            &inputs,
            out,
            Box::new(move |ctx| {
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let mut gx = ctx.needs[0].then(|| vec![0.0; n * ci * hw]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; co * kk]);
                let mut cols = vec![0.0; kk * hw];
                let mut dcols = vec![0.0; kk * hw];
                for bi in 0..n {
                    let g = &ctx.grad[bi * co * hw..(bi + 1) * co * hw];
                    if let Some(gw) = gw.as_mut() {
                        im2col(&xv[bi * ci * hw..(bi + 1) * ci * hw], ci, h, wd, k, &mut cols);
                        gemm(co, hw, kk, g, false, &cols, true, gw);
                    }
                    if let Some(gx) = gx.as_mut() {
                        dcols.fill(0.0);
                        gemm(kk, co, hw, wv, true, g, false, &mut dcols);
                        col2im(&dcols, ci, h, wd, k, &mut gx[bi * ci * hw..(bi + 1) * ci * hw]);
                    }
                }
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    let gb = ctx.needs[2].then(|| {
                        let mut gb = vec![0.0; co];
                        for bi in 0..n {
                            for (oc, acc) in gb.iter_mut().enumerate() {
                                *acc += ctx.grad[(bi * co + oc) * hw..(bi * co + oc + 1) * hw].iter().sum::<f64>();
                            }
                        }
                        gb
                    });
                    grads.push(gb);
                }
                grads
            }),
        ))
    }

    /// 2×2 average pooling.
    pub fn pool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::Shape(format!("pool2 needs even spatial dims, got {h}×{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv[p * h * w..];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    out[p * ho * wo + oy * wo + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = 0.25 * ctx.grad[p * ho * wo + oy * wo + ox];
                            let i = p * h * w + 2 * oy * w + 2 * ox;
                            g[i] = v;
                            g[i + 1] = v;
                            g[i + w] = v;
                            g[i + w + 1] = v;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            for oy in 0..ho {
                for ox in 0..wo {
                    out[p * ho * wo + oy * wo + ox] = xv[p * h * w + (oy / 2) * w + ox / 2];
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            g[p * h * w + (oy / 2) * w + ox / 2] += ctx.grad[p * ho * wo + oy * wo + ox];
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Per-channel correlation with a fixed 2-D kernel, keeping only positions
    /// where the kernel fits entirely inside the image.
    pub fn filter_valid(&mut self, x: Var, kernel: &[f64], kh: usize, kw: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if kernel.len() != kh * kw {
            return Err(NnError::Shape(format!("filter_valid: kernel has {} taps, expected {kh}×{kw}", kernel.len())));
        }
        if h < kh || w < kw {
            return Err(NnError::Shape(format!("filter_valid: {h}×{w} image smaller than {kh}×{kw} kernel")));
        }
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let kernel = kernel.to_vec();
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = kernel[ky * kw + kx];
                    for oy in 0..ho {
                        let s = &src[(oy + ky) * w + kx..(oy + ky) * w + kx + wo];
                        for (d, v) in dst[oy * wo..(oy + 1) * wo].iter_mut().zip(s) {
                            *d += kv * v;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let gout = &ctx.grad[p * ho * wo..(p + 1) * ho * wo];
                    let gin = &mut g[p * h * w..(p + 1) * h * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = kernel[ky * kw + kx];
                            for oy in 0..ho {
                                let d = &mut gin[(oy + ky) * w + kx..(oy + ky) * w + kx + wo];
                                for (d, v) in d.iter_mut().zip(&gout[oy * wo..(oy + 1) * wo]) {
                                    *d += kv * v;
                                }
                            }
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], ci: usize, h: usize, w: usize, wt: &[f64], co: usize, k: usize) -> Vec<f64> {
        let pad = k as isize / 2;
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[((o * ci + c) * k + ky) * k + kx]
                                        * x[(c * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (ci, co, h, w, k) = (3, 4, 5, 7, 3);
        let xs: Vec<f64> = (0..ci * h * w).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let ws: Vec<f64> = (0..co * ci * k * k).map(|i| ((i * 13 % 7) as f64 - 3.0) * 0.2).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, ci, h, w], xs.clone()).unwrap());
        let wv = g.constant(Tensor::new(vec![co, ci, k, k], ws.clone()).unwrap());
        let y = g.conv2d(x, wv, None).unwrap();
        let expect = naive_conv(&xs, ci, h, w, &ws, co, k);
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut g = Graph::new();
        let xt = Tensor::from_fn(vec![2, 1, 4, 4], |i| i as f64 * 0.5 - 3.0);
        let x = g.constant(xt.clone());
        let w = g.constant(Tensor::full(vec![1, 1, 1, 1], 1.0));
        let b = g.constant(Tensor::zeros(vec![1]));
        let y = g.conv2d(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn averaging_kernel_on_constant() {
        // interior keeps the constant, edges see 6/9 and corners 4/9 of it
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 1, 4, 4], 9.0));
        let w = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0 / 9.0));
        let y = g.conv2d(x, w, None).unwrap();
        let v = g.value(y).data();
        assert!((v[5] - 9.0).abs() < 1e-12);
        assert!((v[1] - 6.0).abs() < 1e-12);
        assert!((v[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        assert!(g.conv2d(x, w, None).is_err());
        let w2 = g.constant(Tensor::zeros(vec![1, 2, 2, 2]));
        assert!(g.conv2d(x, w2, None).is_err());
    }

    #[test]
    fn pool_and_upsample() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
        let p = g.pool2(x).unwrap();
        assert_eq!(g.value(p).data(), &[4.0]);
        let u = g.upsample2(p).unwrap();
        assert_eq!(g.value(u).data(), &[4.0; 4]);

        let odd = g.constant(Tensor::zeros(vec![1, 1, 3, 2]));
        assert!(g.pool2(odd).is_err());
    }

    #[test]
    fn pool_upsample_roundtrip_on_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 3, 8, 6], 2.5));
        let p = g.pool2(x).unwrap();
        let u = g.upsample2(p).unwrap();
        assert_eq!(g.value(u), g.value(x));
    }
}
