use ndarray::Array2;
use rayon::prelude::*;

use super::lm::{minimize, LmModel, LmOptions, MAX_P};
use super::models::{derive_t1_voxel, ParameterMap, RelaxKind, RelaxTimes};
use crate::error::{Error, Result};

/// Signed MOLLI model `A − B·exp(−t/e^u)` in `(A, B, u)`.
struct SignedT1;

impl LmModel for SignedT1 {
    fn n_params(&self) -> usize {
        3
    }
    fn eval(&self, p: &[f64; MAX_P], t: f64, g: &mut [f64; MAX_P]) -> f64 {
        let tau = p[2].exp();
        let e = (-t / tau).exp();
        g[0] = 1.0;
        g[1] = -e;
        g[2] = -p[1] * e * t / tau;
        p[0] - p[1] * e
    }
}

/// `A·exp(−t/e^u)` in `(A, u)`.
struct DecayT2;

impl LmModel for DecayT2 {
    fn n_params(&self) -> usize {
        2
    }
    fn eval(&self, p: &[f64; MAX_P], t: f64, g: &mut [f64; MAX_P]) -> f64 {
        let tau = p[1].exp();
        let e = (-t / tau).exp();
        g[0] = e;
        g[1] = p[0] * e * t / tau;
        p[0] * e
    }
}

const T1_STAR_STARTS: [f64; 3] = [300.0, 800.0, 2000.0];
const T2_STARTS: [f64; 3] = [25.0, 60.0, 150.0];
const A_SCALES: [f64; 3] = [0.5, 1.0, 2.0];
const B_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

/// Result of fitting one voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelFit {
    /// `[A, B, T1*]` for T1, `[A, T2]` for T2. Times in ms.
    pub params: Vec<f64>,
    /// Root-mean-square residual of the magnitude model against the signal.
    pub residual: f64,
    pub converged: bool,
    /// Zero or non-finite signal; parameters are all zero.
    pub degenerate: bool,
}

impl VoxelFit {
    fn degenerate(kind: RelaxKind) -> Self {
        Self { params: vec![0.0; kind.n_params()], residual: 0.0, converged: false, degenerate: true }
    }

    /// `(B/A − 1)·T1*` for a T1 fit, `None` for T2 or `A ≤ 0`.
    pub fn t1(&self) -> Option<f64> {
        match self.params.as_slice() {
            &[a, b, ts] if a > 0.0 => Some(derive_t1_voxel(a, b, ts)),
            _ => None,
        }
    }
}

/// Sign patterns as bitmasks over the time-sorted samples (bit j set means
/// sample j is negated). Single zero-crossing prefixes over all `k` samples
/// come first, then every remaining pattern of the `min(k, 4)` earliest ones.
fn sign_hypotheses(k: usize) -> Vec<u64> {
    let k = k.min(63);
    let prefixes: Vec<u64> = (0..=k).map(|n| (1u64 << n) - 1).collect();
    let mut out = prefixes.clone();
    out.extend((0..1u64 << k.min(4)).filter(|h| !prefixes.contains(h)));
    out
}

struct Best {
    params: [f64; MAX_P],
    ssr: f64,
    converged: bool,
}

/// Least-squares fit of the relaxation model to one voxel's magnitude signal.
pub fn fit_voxel(signal: &[f64], times: &RelaxTimes) -> Result<VoxelFit> {
    fit_voxel_with(signal, times, &LmOptions::default())
}

pub fn fit_voxel_with(signal: &[f64], times: &RelaxTimes, opts: &LmOptions) -> Result<VoxelFit> {
    let kind = times.kind();
    if signal.len() != times.len() {
        return Err(Error::Shape(format!("{} samples for {} times", signal.len(), times.len())));
    }
    let smax = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !signal.iter().all(|v| v.is_finite()) || !(smax > 0.0) {
        return Ok(VoxelFit::degenerate(kind));
    }
    let t = times.times();
    let energy: f64 = signal.iter().map(|v| v * v).sum();
    let done = |ssr: f64| ssr <= 1e-26 * energy;
    let mut best: Option<Best> = None;
    let mut consider = |params: [f64; MAX_P], ssr: f64, converged: bool| {
        if best.as_ref().is_none_or(|b| ssr < b.ssr) {
            best = Some(Best { params, ssr, converged });
        }
    };

    match kind {
        RelaxKind::T2 => {
            'outer: for &sa in &A_SCALES {
                for &t2 in &T2_STARTS {
                    let out = minimize(&DecayT2, [sa * smax, t2.ln(), 0.0], t, signal, opts, None);
                    let fin = out.ssr.is_finite();
                    if fin {
                        consider(out.params, out.ssr, out.converged);
                    }
                    if fin && done(out.ssr) {
                        break 'outer;
                    }
                }
            }
        }
        RelaxKind::T1 => {
            let mut order: Vec<usize> = (0..t.len()).collect();
            order.sort_by(|&i, &j| t[i].total_cmp(&t[j]));
            let mut signed = signal.to_vec();
            'hyp: for h in sign_hypotheses(t.len()) {
                for (j, &idx) in order.iter().enumerate() {
                    let neg = (h >> j) & 1 == 1;
                    signed[idx] = if neg { -signal[idx].abs() } else { signal[idx].abs() };
                }
                for &sa in &A_SCALES {
                    for &sb in &B_SCALES {
                        for &ts in &T1_STAR_STARTS {
                            let p0 = [sa * smax, sb * smax, ts.ln()];
                            let out = minimize(&SignedT1, p0, t, &signed, opts, None);
                            if !out.ssr.is_finite() {
                                continue;
                            }
                            // score against the magnitudes, independent of the hypothesis
                            let ssr = magnitude_ssr(&out.params, t, signal);
                            consider(out.params, ssr, out.converged);
                            if done(ssr) {
                                break 'hyp;
                            }
                        }
                    }
                }
            }
        }
    }

    let Some(best) = best else {
        return Ok(VoxelFit { converged: false, ..VoxelFit::degenerate(kind) });
    };
    let residual = (best.ssr / t.len() as f64).sqrt();
    let params = match kind {
        RelaxKind::T1 => {
            let (mut a, mut b) = (best.params[0], best.params[1]);
            if a < 0.0 {
                a = -a;
                b = -b;
            }
            vec![a, b, best.params[2].exp()]
        }
        RelaxKind::T2 => vec![best.params[0], best.params[1].exp()],
    };
    Ok(VoxelFit { params, residual, converged: best.converged, degenerate: false })
}

fn magnitude_ssr(p: &[f64; MAX_P], t: &[f64], signal: &[f64]) -> f64 {
    let tau = p[2].exp();
    t.iter().zip(signal).map(|(&t, &s)| ((p[0] - p[1] * (-t / tau).exp()).abs() - s).powi(2)).sum()
}

/// Voxelwise fit output.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFit {
    pub map: ParameterMap,
    /// RMS residual per voxel; 0 outside the mask.
    pub residual: Array2<f64>,
    /// True outside the mask and where the fit was degenerate or did not converge.
    pub flagged: Array2<bool>,
}

/// Applies [`fit_voxel`] to every masked voxel of a magnitude stack.
pub fn fit_map(stack: &[Array2<f64>], times: &RelaxTimes, mask: &Array2<bool>) -> Result<MapFit> {
    if stack.len() != times.len() {
        return Err(Error::Shape(format!("stack of {} images for {} times", stack.len(), times.len())));
    }
    let dim = mask.dim();
    if let Some(bad) = stack.iter().find(|s| s.dim() != dim) {
        return Err(Error::Shape(format!("stack image {:?} vs mask {:?}", bad.dim(), dim)));
    }
    let kind = times.kind();
    let (nx, ny) = dim;
    let fits: Vec<Option<VoxelFit>> = (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i / ny, i % ny);
            if !mask[[x, y]] {
                return Ok(None);
            }
            let sig: Vec<f64> = stack.iter().map(|s| s[[x, y]]).collect();
            fit_voxel(&sig, times).map(Some)
        })
        .collect::<Result<_>>()?;

    let np = kind.n_params();
    let mut chans = vec![Array2::<f64>::zeros(dim); np];
    let mut residual = Array2::zeros(dim);
    let mut flagged = Array2::from_elem(dim, true);
    for (i, fit) in fits.into_iter().enumerate() {
        let Some(fit) = fit else { continue };
        let idx = [i / ny, i % ny];
        for (c, v) in chans.iter_mut().zip(&fit.params) {
            c[idx] = *v;
        }
        residual[idx] = fit.residual;
        flagged[idx] = fit.degenerate || !fit.converged;
    }
    let map = match kind {
        RelaxKind::T1 => {
            let ts = chans.pop().unwrap();
            let b = chans.pop().unwrap();
            let a = chans.pop().unwrap();
            ParameterMap::t1(a, b, ts)?
        }
        RelaxKind::T2 => {
            let t2 = chans.pop().unwrap();
            let a = chans.pop().unwrap();
            ParameterMap::t2(a, t2)?
        }
    };
    Ok(MapFit { map, residual, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hypotheses_cover_all_patterns_once() {
        let h = sign_hypotheses(4);
        assert_eq!(h.len(), 16);
        assert_eq!(&h[..5], &[0, 1, 3, 7, 15]);
        let mut s = h.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 16);
        let h9 = sign_hypotheses(9);
        assert_eq!(h9.len(), 10 + 16 - 5);
        assert!(h9.contains(&511));
    }

    #[test]
    fn signed_t1_gradient_matches_differences() {
        let p = [1.1, 2.3, 700f64.ln()];
        let mut g = [0.0; 3];
        SignedT1.eval(&p, 420.0, &mut g);
        for k in 0..3 {
            let h = 1e-6;
            let (mut a, mut b) = (p, p);
            a[k] += h;
            b[k] -= h;
            let mut d = [0.0; 3];
            let fd = (SignedT1.eval(&a, 420.0, &mut d) - SignedT1.eval(&b, 420.0, &mut d)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
    }
}
