//! Training losses on magnitude stacks laid out as `[1, k_t, H, W]`.

use ndarray::Array2;
use qmri_core::metrics::{gaussian_window, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use qmri_core::relaxometry::RelaxTimes;
use qmri_nn::{Bound, Graph, Tensor, Var};

use crate::convert::mags_to_tensor;
use crate::error::{ReconError, Result};
use crate::mapping::MappingNet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { gamma1: 0.2, gamma2: 0.8, gamma3: 0.01, gamma4: 0.1 }
    }
}

impl LossWeights {
    /// Reconstruction terms only.
    pub fn recon_only(gamma1: f64, gamma2: f64) -> Self {
        Self { gamma1, gamma2, gamma3: 0.0, gamma4: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in
            [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma3", self.gamma3), ("gamma4", self.gamma4)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ReconError::InvalidArgument(format!("{n} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn uses_mapping(&self) -> bool {
        self.gamma3 > 0.0 || self.gamma4 > 0.0
    }
}

/// Mean local SSIM of `x` (`[1, 1, H, W]`) against a constant reference,
/// matching [`qmri_core::metrics::ssim`].
pub fn ssim(g: &mut Graph, x: Var, reference: &Array2<f64>) -> Result<Var> {
    let (h, w) = reference.dim();
    if g.shape(x) != [1, 1, h, w] {
        return Err(ReconError::Shape(format!("SSIM input {:?} vs reference {:?}", g.shape(x), (h, w))));
    }
    let range = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(range > 0.0) {
        return Err(ReconError::InvalidArgument("SSIM reference has no positive maximum".into()));
    }
    let k = SSIM_WINDOW;
    let win = gaussian_window(k, SSIM_SIGMA);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let y = g.constant(Tensor::new(vec![1, 1, h, w], reference.iter().copied().collect())?);
    let mx = g.filter_valid(x, &win, k, k)?;
    let my = g.filter_valid(y, &win, k, k)?;
    let xx = g.square(x);
    let yy = g.square(y);
    let xy = g.mul(x, y)?;
    let mxx = g.filter_valid(xx, &win, k, k)?;
    let myy = g.filter_valid(yy, &win, k, k)?;
    let mxy = g.filter_valid(xy, &win, k, k)?;
    let mx2 = g.square(mx);
    let my2 = g.square(my);
    let mxmy = g.mul(mx, my)?;
    let vx = g.sub(mxx, mx2)?;
    let vy = g.sub(myy, my2)?;
    let cxy = g.sub(mxy, mxmy)?;

    let n1 = g.scale(mxmy, 2.0);
    let n1 = g.add_scalar(n1, c1);
    let n2 = g.scale(cxy, 2.0);
    let n2 = g.add_scalar(n2, c2);
    let num = g.mul(n1, n2)?;
    let d1 = g.add(mx2, my2)?;
    let d1 = g.add_scalar(d1, c1);
    let d2 = g.add(vx, vy)?;
    let d2 = g.add_scalar(d2, c2);
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

fn check_stack(g: &Graph, xhat: Var, target: &[Array2<f64>]) -> Result<()> {
    let first = target.first().ok_or_else(|| ReconError::InvalidArgument("empty target stack".into()))?;
    let (h, w) = first.dim();
    if g.shape(xhat) != [1, target.len(), h, w] || target.iter().any(|t| t.dim() != (h, w)) {
        return Err(ReconError::Shape(format!(
            "estimate {:?} vs {} target images of {:?}",
            g.shape(xhat),
            target.len(),
            (h, w)
        )));
    }
    Ok(())
}

/// `γ1·mean|x̂ − x| + γ2·(1 − SSIM(x̂, x))`, SSIM averaged over baselines.
/// Terms with zero weight are not built.
pub fn loss_recon(g: &mut Graph, xhat: Var, target: &[Array2<f64>], gamma1: f64, gamma2: f64) -> Result<Var> {
    check_stack(g, xhat, target)?;
    let mut terms = Vec::new();
    if gamma1 != 0.0 {
        let x = g.constant(mags_to_tensor(target, 1.0)?);
        let d = g.sub(xhat, x)?;
        let d = g.abs(d);
        let l1 = g.mean(d);
        terms.push(g.scale(l1, gamma1));
    }
    if gamma2 != 0.0 {
        let mut acc: Option<Var> = None;
        for (t, reference) in target.iter().enumerate() {
            let ch = g.slice_channels(xhat, t, 1)?;
            let s = ssim(g, ch, reference)?;
            acc = Some(match acc {
                None => s,
                Some(a) => g.add(a, s)?,
            });
        }
        let mean = g.scale(acc.expect("nonempty"), 1.0 / target.len() as f64);
        let dissim = g.scale(mean, -1.0);
        let dissim = g.add_scalar(dissim, 1.0);
        terms.push(g.scale(dissim, gamma2));
    }
    sum_terms(g, terms)
}

fn sum_terms(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(g.constant(Tensor::scalar(0.0)));
    };
    for t in it {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Relaxometry consistency of a stack: `mean|s(M(x̂), t) − x̂|`, with M's
/// weights bound as constants by the caller. `xhat` must already be in M's
/// normalized units.
pub fn loss_relax(g: &mut Graph, xhat: Var, times: &RelaxTimes, net: &MappingNet, m: &Bound) -> Result<Var> {
    net.consistency(g, m, xhat, times)
}

/// Frozen mapping network used by [`loss_total`].
pub struct Guidance<'a> {
    pub net: &'a MappingNet,
    pub params: &'a Bound,
    pub times: &'a RelaxTimes,
    /// Multiplies both stacks before they enter M.
    pub input_scale: f64,
}

/// `loss_recon + γ3·loss_relax(x̂) + γ4·mean|M(x̂) − M(x)|`. `M(x)` is a
/// constant; gradients reach `x̂` through M but never M's weights, which
/// the caller binds as constants.
pub fn loss_total(
    g: &mut Graph,
    xhat: Var,
    target: &[Array2<f64>],
    weights: &LossWeights,
    guidance: Option<&Guidance<'_>>,
) -> Result<Var> {
    weights.validate()?;
    let recon = loss_recon(g, xhat, target, weights.gamma1, weights.gamma2)?;
    if !weights.uses_mapping() {
        return Ok(recon);
    }
    let gd = guidance.ok_or_else(|| ReconError::InvalidArgument("relaxometry terms need a mapping network".into()))?;
    let mut terms = vec![recon];
    let xm = g.scale(xhat, gd.input_scale);
    if weights.gamma3 != 0.0 {
        let lr = loss_relax(g, xm, gd.times, gd.net, gd.params)?;
        terms.push(g.scale(lr, weights.gamma3));
    }
    if weights.gamma4 != 0.0 {
        let ref_params = {
            let mut side = Graph::new();
            let p = bound_copy(g, gd.params, &mut side)?;
            let x = side.constant(mags_to_tensor(target, 1.0 / gd.input_scale)?);
            let out = gd.net.forward(&mut side, &p, x, gd.times)?;
            side.value(out).clone()
        };
        let pm = gd.net.forward(g, gd.params, xm, gd.times)?;
        let pr = g.constant(ref_params);
        let d = g.sub(pm, pr)?;
        let d = g.abs(d);
        let l = g.mean(d);
        terms.push(g.scale(l, weights.gamma4));
    }
    sum_terms(g, terms)
}

/// Rebinds the values behind `params` as constants on another graph.
fn bound_copy(src: &Graph, params: &Bound, dst: &mut Graph) -> Result<Bound> {
    let mut store = qmri_nn::ParamStore::new();
    for (name, &v) in params.iter() {
        store.insert(name.clone(), src.value(v).clone());
    }
    Ok(store.bind(dst, false))
}
