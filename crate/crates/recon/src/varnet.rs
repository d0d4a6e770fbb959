//! The unrolled variational network and the sensitivity refiner.
//!
//! Each layer updates the k-space iterate by
//! `ŷ ← ŷ − α_t·U(ŷ − y) − F·E·G_t(R·F⁻¹·ŷ)`, where `E` expands an image to
//! coils, `R` combines coils and `G_t` is a CNN on the coil-combined
//! baselines stacked as channels.

use ndarray::Array2;
use qmri_core::io::RegularizerKind;
use qmri_core::mri_ops::{
    fft2c_coils, reduce as reduce_coils, ComplexImage, Direction, MultiCoil, SamplingMask, SensitivityMaps,
};
use qmri_core::stats::robust_scale;
use qmri_nn::{Bound, ConvGru, Graph, NetworkConfig, ParamStore, Tensor, UNet, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convert::{
    coils_to_tensor, sens_to_tensor, tensor_to_coils, tensor_to_images, tensor_to_mags, tensor_to_sens,
};
use crate::error::{ReconError, Result};
use crate::ops;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefinerConfig {
    pub base_filters: usize,
    pub pooling_levels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarNetConfig {
    /// `0` runs no layer at all and reduces to the zero-filled reconstruction.
    pub unrolled_layers: usize,
    pub regularizer: RegularizerKind,
    pub alpha_init: f64,
    pub shared_weights: bool,
    /// U-Net base width, or hidden channels of the GRU.
    pub base_filters: usize,
    /// Ignored for the GRU.
    pub pooling_levels: usize,
    pub refiner: Option<RefinerConfig>,
}

impl Default for VarNetConfig {
    fn default() -> Self {
        Self {
            unrolled_layers: 10,
            regularizer: RegularizerKind::UNet,
            alpha_init: 1.0,
            shared_weights: false,
            base_filters: 256,
            pooling_levels: 1,
            refiner: Some(RefinerConfig { base_filters: 8, pooling_levels: 1 }),
        }
    }
}

impl VarNetConfig {
    /// Data consistency only: no regularizer, no refiner.
    pub fn data_consistency_only(unrolled_layers: usize, alpha_init: f64) -> Self {
        Self { unrolled_layers, regularizer: RegularizerKind::None, alpha_init, refiner: None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_init.is_finite() && self.alpha_init > 0.0) {
            return Err(ReconError::InvalidArgument(format!("alpha_init must be positive, got {}", self.alpha_init)));
        }
        if self.regularizer != RegularizerKind::None && self.base_filters == 0 {
            return Err(ReconError::InvalidArgument("regularizer needs base_filters ≥ 1".into()));
        }
        if matches!(self.refiner, Some(r) if r.base_filters == 0) {
            return Err(ReconError::InvalidArgument("refiner needs base_filters ≥ 1".into()));
        }
        Ok(())
    }
}

pub fn alpha_name(t: usize) -> String {
    format!("alpha.{t:02}")
}

pub const REFINER_PREFIX: &str = "refiner";

/// Network architecture for stacks of `k_t` baselines. Weights live in a
/// separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct VarNet {
    pub cfg: VarNetConfig,
    pub k_t: usize,
    unets: Vec<UNet>,
    gru: Option<ConvGru>,
    refiner: Option<UNet>,
}

/// Measurement and initial maps for one stack, in normalized units.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Masked k-space `[k_t·n_c, 2, H, W]`, divided by `scale`.
    pub y: Tensor,
    pub s0: Tensor,
    /// Voxels where the initial maps are nonzero.
    pub support: Vec<bool>,
    pub lines: Vec<bool>,
    pub k_t: usize,
    pub n_c: usize,
    /// 99th percentile of the zero-filled magnitudes.
    pub scale: f64,
}

impl Prepared {
    pub fn new(y: &[MultiCoil], mask: &SamplingMask, s0: &SensitivityMaps) -> Result<Self> {
        let first = y.first().ok_or_else(|| ReconError::InvalidArgument("empty k-space stack".into()))?;
        let n_c = first.n_coils();
        let (h, w) = first.image_shape();
        if s0.n_coils() != n_c || s0.image_shape() != (h, w) {
            return Err(ReconError::Shape(format!(
                "k-space {n_c}×{h}×{w} vs maps {}×{:?}",
                s0.n_coils(),
                s0.image_shape()
            )));
        }
        if mask.len() != w {
            return Err(ReconError::Shape(format!("mask has {} lines, k-space has {w}", mask.len())));
        }
        let zf = zero_filled_with(y, mask, s0)?;
        let mags: Vec<Array2<f64>> = zf.iter().map(ComplexImage::magnitude).collect();
        let scale = robust_scale(mags.iter().flat_map(|m| m.iter().copied()));
        let masked =
            y.iter().map(|k| qmri_core::mri_ops::apply_mask(k, mask)).collect::<qmri_core::Result<Vec<_>>>()?;
        let support = s0.rss().iter().map(|&r| r > 0.5).collect();
        Ok(Self {
            y: coils_to_tensor(&masked, scale)?,
            s0: sens_to_tensor(s0)?,
            support,
            lines: mask.lines().to_vec(),
            k_t: y.len(),
            n_c,
            scale,
        })
    }

    pub fn image_shape(&self) -> (usize, usize) {
        let s = self.y.shape();
        (s[2], s[3])
    }
}

/// `R·F⁻¹·U·y` for every baseline.
pub fn zero_filled_with(y: &[MultiCoil], mask: &SamplingMask, sens: &SensitivityMaps) -> Result<Vec<ComplexImage>> {
    y.iter()
        .map(|k| {
            let m = qmri_core::mri_ops::apply_mask(k, mask)?;
            let imgs = fft2c_coils(&m, Direction::Inverse)?;
            Ok(reduce_coils(&imgs, sens)?)
        })
        .collect()
}

/// Graph nodes produced by [`VarNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Coil-combined complex images `[k_t, 2, H, W]`.
    pub image: Var,
    /// `|image|` as `[1, k_t, H, W]`.
    pub magnitude: Var,
    pub sens: Var,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub images: Vec<ComplexImage>,
    pub magnitudes: Vec<Array2<f64>>,
    /// Maps used by the data term, after refinement.
    pub sens: SensitivityMaps,
}

/// Iterate of the unrolled scheme, in the units of the measurement.
#[derive(Clone, Debug)]
pub struct ReconState {
    pub yhat: Vec<MultiCoil>,
    pub hidden: Option<Tensor>,
    pub step: usize,
}

impl ReconState {
    /// `ŷ_0 = U·y`.
    pub fn initial(y: &[MultiCoil], mask: &SamplingMask) -> Result<Self> {
        let yhat = y.iter().map(|k| qmri_core::mri_ops::apply_mask(k, mask)).collect::<qmri_core::Result<Vec<_>>>()?;
        Ok(Self { yhat, hidden: None, step: 0 })
    }
}

impl VarNet {
    pub fn new(cfg: VarNetConfig, k_t: usize) -> Result<Self> {
        cfg.validate()?;
        if k_t == 0 {
            return Err(ReconError::InvalidArgument("need at least one baseline".into()));
        }
        let ch = 2 * k_t;
        let mut unets = Vec::new();
        let mut gru = None;
        match cfg.regularizer {
            RegularizerKind::UNet => {
                let n = if cfg.shared_weights { cfg.unrolled_layers.min(1) } else { cfg.unrolled_layers };
                for t in 0..n {
                    let prefix = if cfg.shared_weights { "reg".to_string() } else { format!("reg.{t:02}") };
                    unets.push(UNet::new(NetworkConfig::unet(ch, ch, cfg.base_filters, cfg.pooling_levels), prefix)?);
                }
            }
            RegularizerKind::ConvGru => {
                gru = Some(ConvGru::new(NetworkConfig::conv_gru(ch, ch, cfg.base_filters), "gru")?);
            }
            RegularizerKind::None => {}
        }
        let refiner = cfg
            .refiner
            .map(|r| UNet::new(NetworkConfig::unet(2, 2, r.base_filters, r.pooling_levels), REFINER_PREFIX))
            .transpose()?;
        Ok(Self { cfg, k_t, unets, gru, refiner })
    }

    /// Step sizes at `alpha_init`; every network's output layer starts at
    /// zero, so an untrained model is the data-consistency scheme alone.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 0..self.cfg.unrolled_layers {
            store.insert(alpha_name(t), Tensor::scalar(self.cfg.alpha_init));
        }
        for u in &self.unets {
            u.init(&mut store, &mut rng, true);
        }
        if let Some(g) = &self.gru {
            g.init(&mut store, &mut rng, true);
        }
        if let Some(r) = &self.refiner {
            r.init(&mut store, &mut rng, true);
        }
        store
    }

    pub fn has_refiner(&self) -> bool {
        self.refiner.is_some()
    }

    fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        for u in &self.unets {
            u.cfg.check_spatial(h, w)?;
        }
        if let Some(r) = &self.refiner {
            r.cfg.check_spatial(h, w)?;
        }
        Ok(())
    }

    /// `S0 + S(S0)`, renormalized to unit RSS on `support`. Without a
    /// refiner the maps are used as given.
    pub fn refine_graph(&self, g: &mut Graph, params: &Bound, s0: Var, support: &[bool]) -> Result<Var> {
        let Some(r) = &self.refiner else {
            return Ok(s0);
        };
        let delta = r.forward(g, params, s0)?;
        let s = g.add(s0, delta)?;
        ops::normalize_rss(g, s, support)
    }

    /// Refined maps for an initial estimate.
    pub fn refine_sensitivity(&self, params: &ParamStore, s0: &SensitivityMaps) -> Result<SensitivityMaps> {
        let (h, w) = s0.image_shape();
        self.check_spatial(h, w)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let sv = g.constant(sens_to_tensor(s0)?);
        let support: Vec<bool> = s0.rss().iter().map(|&r| r > 0.5).collect();
        let s = self.refine_graph(&mut g, &p, sv, &support)?;
        tensor_to_sens(g.value(s))
    }

    /// One layer of the update on graph nodes. `hidden` is the GRU state.
    #[allow(clippy::too_many_arguments)]
    pub fn step_graph(
        &self,
        g: &mut Graph,
        params: &Bound,
        t: usize,
        yhat: Var,
        y: &Tensor,
        s: Var,
        lines: &[bool],
        hidden: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let [b, _, h, w] = g.value(yhat).dims4()?;
        let n_c = g.shape(s)[0];
        if n_c == 0 || b != self.k_t * n_c {
            return Err(ReconError::Shape(format!(
                "iterate {:?} for {} baselines of {n_c} coils",
                g.shape(yhat),
                self.k_t
            )));
        }
        let alpha = params.get(&alpha_name(t))?;
        let mut next = ops::data_consistency(g, yhat, y, alpha, lines)?;
        let ch = 2 * self.k_t;
        let reg = |g: &mut Graph| -> Result<Var> {
            let coils = ops::fft(g, yhat, Direction::Inverse)?;
            let img = ops::reduce(g, coils, s)?;
            Ok(g.reshape(img, &[1, ch, h, w])?)
        };
        let mut new_hidden = hidden;
        let update = match self.cfg.regularizer {
            RegularizerKind::None => None,
            RegularizerKind::UNet => {
                let x = reg(g)?;
                let net = &self.unets[if self.cfg.shared_weights { 0 } else { t }];
                Some(net.forward(g, params, x)?)
            }
            RegularizerKind::ConvGru => {
                let x = reg(g)?;
                let cell = self.gru.as_ref().expect("built with the config");
                let h0 = match hidden {
                    Some(v) => v,
                    None => g.constant(Tensor::zeros(vec![1, cell.hidden_channels(), h, w])),
                };
                let (out, h1) = cell.step(g, params, x, h0)?;
                new_hidden = Some(h1);
                Some(out)
            }
        };
        if let Some(u) = update {
            let u = g.reshape(u, &[self.k_t, 2, h, w])?;
            let coils = ops::expand(g, u, s)?;
            let k = ops::fft(g, coils, Direction::Forward)?;
            next = g.sub(next, k)?;
        }
        Ok((next, new_hidden))
    }

    /// The whole network on a prepared stack. Outputs are in the normalized
    /// units of `prep`.
    pub fn forward(&self, g: &mut Graph, params: &Bound, prep: &Prepared) -> Result<Forward> {
        if prep.k_t != self.k_t {
            return Err(ReconError::InvalidArgument(format!(
                "network built for {} baselines, got {}",
                self.k_t, prep.k_t
            )));
        }
        let (h, w) = prep.image_shape();
        self.check_spatial(h, w)?;
        let s0 = g.constant(prep.s0.clone());
        let s = self.refine_graph(g, params, s0, &prep.support)?;
        let mut yhat = g.constant(prep.y.clone());
        let mut hidden = None;
        for t in 0..self.cfg.unrolled_layers {
            let (next, h1) = self.step_graph(g, params, t, yhat, &prep.y, s, &prep.lines, hidden)?;
            yhat = next;
            hidden = h1;
        }
        let coils = ops::fft(g, yhat, Direction::Inverse)?;
        let image = ops::reduce(g, coils, s)?;
        let mag = ops::cabs(g, image)?;
        let magnitude = g.reshape(mag, &[1, self.k_t, h, w])?;
        Ok(Forward { image, magnitude, sens: s })
    }

    /// Runs every layer from `ŷ_0 = U·y` and returns `R·F⁻¹·ŷ_T` in the
    /// units of `y`.
    pub fn reconstruct(
        &self,
        params: &ParamStore,
        y: &[MultiCoil],
        mask: &SamplingMask,
        s0: &SensitivityMaps,
    ) -> Result<Reconstruction> {
        let prep = Prepared::new(y, mask, s0)?;
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, &prep)?;
        Ok(Reconstruction {
            images: tensor_to_images(g.value(out.image), prep.scale)?,
            magnitudes: tensor_to_mags(g.value(out.magnitude), prep.scale)?,
            sens: tensor_to_sens(g.value(out.sens))?,
        })
    }

    /// Applies layer `state.step` to the iterate, with `sens` used as given.
    pub fn unrolled_step(
        &self,
        params: &ParamStore,
        state: &ReconState,
        y: &[MultiCoil],
        mask: &SamplingMask,
        sens: &SensitivityMaps,
    ) -> Result<ReconState> {
        if state.step >= self.cfg.unrolled_layers {
            return Err(ReconError::InvalidArgument(format!(
                "step {} past the last of {} layers",
                state.step, self.cfg.unrolled_layers
            )));
        }
        if state.yhat.len() != y.len() {
            return Err(ReconError::Shape(format!("{} iterates for {} baselines", state.yhat.len(), y.len())));
        }
        for (a, b) in state.yhat.iter().zip(y) {
            if a.data().dim() != b.data().dim() {
                return Err(ReconError::Shape(format!(
                    "iterate {:?} vs measurement {:?}",
                    a.data().dim(),
                    b.data().dim()
                )));
            }
        }
        let n_c = sens.n_coils();
        if y.first().is_some_and(|k| k.n_coils() != n_c || k.image_shape() != sens.image_shape()) {
            return Err(ReconError::Shape("measurement and maps disagree".into()));
        }
        let masked =
            y.iter().map(|k| qmri_core::mri_ops::apply_mask(k, mask)).collect::<qmri_core::Result<Vec<_>>>()?;
        let yt = coils_to_tensor(&masked, 1.0)?;
        if mask.len() != yt.shape()[3] {
            return Err(ReconError::Shape(format!("mask has {} lines, k-space has {}", mask.len(), yt.shape()[3])));
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let s = g.constant(sens_to_tensor(sens)?);
        let yhat = g.constant(coils_to_tensor(&state.yhat, 1.0)?);
        let hidden = state.hidden.clone().map(|h| g.constant(h));
        let (next, h1) = self.step_graph(&mut g, &p, state.step, yhat, &yt, s, mask.lines(), hidden)?;
        Ok(ReconState {
            yhat: tensor_to_coils(g.value(next), n_c, 1.0)?,
            hidden: h1.map(|h| g.value(h).clone()),
            step: state.step + 1,
        })
    }
}
