//! The mapping network M: baseline magnitudes plus relaxation times in,
//! signal-model parameters out.

use ndarray::Array2;
use qmri_core::relaxometry::{ParameterMap, RelaxKind, RelaxTimes};
use qmri_core::stats::robust_scale;
use qmri_nn::{Adam, Bound, Graph, NetworkConfig, ParamStore, Tensor, UNet, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convert::{mags_to_tensor, tensor_to_mags};
use crate::error::{ReconError, Result};

/// Relaxation times enter the network divided by this (ms).
pub const TIME_UNIT: f64 = 1000.0;
/// Network units of T1* and T2 (ms).
pub const T1_STAR_UNIT: f64 = 1000.0;
pub const T2_UNIT: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingConfig {
    pub kind: RelaxKind,
    pub k_t: usize,
    pub base_filters: usize,
    pub pooling_levels: usize,
}

impl MappingConfig {
    pub fn new(times: &RelaxTimes, base_filters: usize, pooling_levels: usize) -> Self {
        Self { kind: times.kind(), k_t: times.len(), base_filters, pooling_levels }
    }

    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }
}

/// Architecture of M. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct MappingNet {
    pub cfg: MappingConfig,
    unet: UNet,
}

pub const MAPPING_PREFIX: &str = "map";

impl MappingNet {
    pub fn new(cfg: MappingConfig) -> Result<Self> {
        if cfg.k_t < cfg.kind.n_params() {
            return Err(ReconError::InvalidArgument(format!(
                "{} baselines cannot determine {} parameters",
                cfg.k_t,
                cfg.kind.n_params()
            )));
        }
        let unet = UNet::new(
            NetworkConfig::unet(2 * cfg.k_t, cfg.n_params(), cfg.base_filters, cfg.pooling_levels),
            MAPPING_PREFIX,
        )?;
        Ok(Self { cfg, unet })
    }

    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        self.unet.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), false);
        store
    }

    pub fn check_times(&self, times: &RelaxTimes) -> Result<()> {
        if times.kind() != self.cfg.kind || times.len() != self.cfg.k_t {
            return Err(ReconError::InvalidArgument(format!(
                "mapping network expects {} {} baselines, got {} {}",
                self.cfg.k_t,
                self.cfg.kind,
                times.len(),
                times.kind()
            )));
        }
        Ok(())
    }

    /// `x`: normalized magnitudes `[1, k_t, H, W]`. Returns the softplus
    /// parameter channels `[1, n_params, H, W]` in network units.
    pub fn forward(&self, g: &mut Graph, params: &Bound, x: Var, times: &RelaxTimes) -> Result<Var> {
        self.check_times(times)?;
        let [b, c, h, w] = g.value(x).dims4()?;
        if b != 1 || c != self.cfg.k_t {
            return Err(ReconError::Shape(format!(
                "mapping input {:?}, expected [1, {}, H, W]",
                g.shape(x),
                self.cfg.k_t
            )));
        }
        let hw = h * w;
        let tc = Tensor::from_fn(vec![1, c, h, w], |i| times.times()[i / hw] / TIME_UNIT);
        let tc = g.constant(tc);
        let inp = g.concat_channels(&[x, tc])?;
        let raw = self.unet.forward(g, params, inp)?;
        Ok(g.softplus(raw))
    }

    /// Signal model evaluated on network-unit parameters, `[1, k_t, H, W]`.
    pub fn render(&self, g: &mut Graph, p: Var, times: &RelaxTimes) -> Result<Var> {
        self.check_times(times)?;
        let mut out = Vec::with_capacity(times.len());
        match self.cfg.kind {
            RelaxKind::T2 => {
                let a = g.slice_channels(p, 0, 1)?;
                let t2 = g.slice_channels(p, 1, 1)?;
                let inv = g.recip(t2);
                for &t in times.times() {
                    let e = g.scale(inv, -t / T2_UNIT);
                    let e = g.exp(e);
                    out.push(g.mul(a, e)?);
                }
            }
            RelaxKind::T1 => {
                let a = g.slice_channels(p, 0, 1)?;
                let b = g.slice_channels(p, 1, 1)?;
                let ts = g.slice_channels(p, 2, 1)?;
                let inv = g.recip(ts);
                for &t in times.times() {
                    let e = g.scale(inv, -t / T1_STAR_UNIT);
                    let e = g.exp(e);
                    let be = g.mul(b, e)?;
                    let d = g.sub(a, be)?;
                    out.push(g.abs(d));
                }
            }
        }
        Ok(g.concat_channels(&out)?)
    }

    /// Mean absolute difference between the re-rendered prediction and `x`.
    pub fn consistency(&self, g: &mut Graph, params: &Bound, x: Var, times: &RelaxTimes) -> Result<Var> {
        let p = self.forward(g, params, x, times)?;
        let s = self.render(g, p, times)?;
        let d = g.sub(s, x)?;
        let d = g.abs(d);
        Ok(g.mean(d))
    }
}

/// A mapping network together with its weights.
#[derive(Clone, Debug)]
pub struct MappingModel {
    pub net: MappingNet,
    pub params: ParamStore,
}

impl MappingModel {
    /// Parameter maps for a magnitude stack. The stack is normalized by its
    /// 99th percentile and the amplitudes are scaled back afterwards.
    pub fn predict(&self, stack: &[Array2<f64>], times: &RelaxTimes) -> Result<ParameterMap> {
        self.net.check_times(times)?;
        if stack.len() != times.len() {
            return Err(ReconError::InvalidArgument(format!("{} images for {} times", stack.len(), times.len())));
        }
        let scale = stack_scale(stack);
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(mags_to_tensor(stack, scale)?);
        let out = self.net.forward(&mut g, &p, x, times)?;
        let ch = tensor_to_mags(g.value(out), 1.0)?;
        Ok(match self.net.cfg.kind {
            RelaxKind::T2 => ParameterMap::t2(ch[0].mapv(|v| v * scale), ch[1].mapv(|v| v * T2_UNIT))?,
            RelaxKind::T1 => ParameterMap::t1(
                ch[0].mapv(|v| v * scale),
                ch[1].mapv(|v| v * scale),
                ch[2].mapv(|v| v * T1_STAR_UNIT),
            )?,
        })
    }
}

/// Normalization of a magnitude stack: its 99th percentile.
pub fn stack_scale(stack: &[Array2<f64>]) -> f64 {
    robust_scale(stack.iter().flat_map(|m| m.iter().copied()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Unsupervised pre-training of M on fully sampled magnitude stacks,
/// minimizing the signal-model consistency loss. Returns the model and the
/// mean loss of every epoch.
pub fn train_mapping(
    stacks: &[Vec<Array2<f64>>],
    times: &RelaxTimes,
    cfg: MappingConfig,
    opts: &TrainOptions,
    mut log: impl FnMut(usize, f64),
) -> Result<(MappingModel, Vec<f64>)> {
    if stacks.is_empty() {
        return Err(ReconError::EmptyDataset);
    }
    if !(opts.lr >= 0.0) || opts.epochs == 0 {
        return Err(ReconError::InvalidArgument("need epochs ≥ 1 and lr ≥ 0".into()));
    }
    let net = MappingNet::new(cfg)?;
    net.check_times(times)?;
    let inputs = stacks
        .iter()
        .map(|s| {
            if s.len() != times.len() {
                return Err(ReconError::InvalidArgument(format!("{} images for {} times", s.len(), times.len())));
            }
            mags_to_tensor(s, stack_scale(s))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut params = net.init(opts.seed);
    let mut adam = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5EED_0F_4D);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let x = g.constant(inputs[i].clone());
            let loss = net.consistency(&mut g, &p, x, times)?;
            total += g.value(loss).item();
            g.backward(loss)?;
            adam.step(&mut params, &p.gradients(&g))?;
        }
        let mean = total / inputs.len() as f64;
        log(epoch, mean);
        losses.push(mean);
    }
    Ok((MappingModel { net, params }, losses))
}
