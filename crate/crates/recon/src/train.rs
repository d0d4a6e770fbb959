//! Supervised training of the reconstruction network with the mapping
//! network frozen.

use ndarray::Array2;
use qmri_core::metrics::psnr;
use qmri_core::mri_ops::{estimate_sensitivity_averaged, MultiCoil, SamplingMask, SensitivityMaps, SENSITIVITY_EPS};
use qmri_core::phantom::SimulatedSlice;
use qmri_core::relaxometry::RelaxTimes;
use qmri_nn::{Adam, Graph, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ReconError, Result};
use crate::losses::{loss_total, Guidance, LossWeights};
use crate::mapping::{stack_scale, MappingModel};
use crate::varnet::{zero_filled_with, Prepared, VarNet};

/// Undersampled input and fully sampled magnitude target for one slice.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub kspace: Vec<MultiCoil>,
    pub mask: SamplingMask,
    pub target: Vec<Array2<f64>>,
}

impl TrainSample {
    pub fn from_slice(s: &SimulatedSlice) -> Self {
        Self { kspace: s.kspace.clone(), mask: s.mask.clone(), target: s.target.clone() }
    }

    /// Maps estimated from the auto-calibration lines of the averaged stack.
    pub fn initial_maps(&self) -> Result<SensitivityMaps> {
        Ok(estimate_sensitivity_averaged(&self.kspace, &self.mask, SENSITIVITY_EPS)?)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        Prepared::new(&self.kspace, &self.mask, &self.initial_maps()?)
    }

    /// Magnitudes of the zero-filled reconstruction.
    pub fn zero_filled(&self) -> Result<Vec<Array2<f64>>> {
        let imgs = zero_filled_with(&self.kspace, &self.mask, &self.initial_maps()?)?;
        Ok(imgs.iter().map(|i| i.magnitude()).collect())
    }
}

/// Training samples, possibly regenerated every epoch.
pub trait ReconDataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, epoch: usize, index: usize) -> Result<TrainSample>;
}

impl ReconDataset for [TrainSample] {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn sample(&self, _epoch: usize, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

impl ReconDataset for Vec<TrainSample> {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn sample(&self, _epoch: usize, index: usize) -> Result<TrainSample> {
        Ok(self[index].clone())
    }
}

#[derive(Clone, Debug)]
pub struct ReconTraining<'a> {
    pub weights: LossWeights,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Frozen mapping network and its protocol, needed when γ3 or γ4 > 0.
    pub mapping: Option<(&'a MappingModel, &'a RelaxTimes)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Mean PSNR over the validation stacks, when there are any.
    pub val_psnr: Option<f64>,
}

/// Mean PSNR (dB) of estimated against reference stacks, averaged over all
/// baselines.
pub fn mean_psnr(est: &[Vec<Array2<f64>>], reference: &[Vec<Array2<f64>>]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (e, r) in est.iter().zip(reference) {
        for (a, b) in e.iter().zip(r) {
            acc += psnr(a, b)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(ReconError::EmptyDataset);
    }
    Ok(acc / n as f64)
}

/// Reconstructed magnitude stacks for every sample.
pub fn reconstruct_all(net: &VarNet, params: &ParamStore, samples: &[TrainSample]) -> Result<Vec<Vec<Array2<f64>>>> {
    samples.iter().map(|s| Ok(net.reconstruct(params, &s.kspace, &s.mask, &s.initial_maps()?)?.magnitudes)).collect()
}

pub fn validation_psnr(net: &VarNet, params: &ParamStore, samples: &[TrainSample]) -> Result<f64> {
    let est = reconstruct_all(net, params, samples)?;
    let refs: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    mean_psnr(&est, &refs)
}

pub fn zero_filled_psnr(samples: &[TrainSample]) -> Result<f64> {
    let est = samples.iter().map(TrainSample::zero_filled).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    mean_psnr(&est, &refs)
}

#[derive(Clone, Debug)]
pub struct ReconRun {
    pub params: ParamStore,
    pub logs: Vec<EpochLog>,
    /// Parameters that ended up with optimizer state.
    pub tracked: Vec<String>,
}

/// Adam on `loss_total`, one stack per step, in a seeded shuffled order.
/// The mapping network's weights are bound as constants and never reach the
/// optimizer.
pub fn train_recon(
    net: &VarNet,
    mut params: ParamStore,
    data: &dyn ReconDataset,
    val: &[TrainSample],
    opts: &ReconTraining<'_>,
    mut log: impl FnMut(&EpochLog),
) -> Result<ReconRun> {
    if data.is_empty() {
        return Err(ReconError::EmptyDataset);
    }
    opts.weights.validate()?;
    if !(opts.lr >= 0.0) || opts.epochs == 0 {
        return Err(ReconError::InvalidArgument("need epochs ≥ 1 and lr ≥ 0".into()));
    }
    let mapping = match (opts.weights.uses_mapping(), opts.mapping) {
        (false, _) => None,
        (true, None) => return Err(ReconError::InvalidArgument("relaxometry terms need a mapping network".into())),
        (true, Some((m, times))) => {
            m.net.check_times(times)?;
            Some((m, times))
        }
    };
    let mut adam = Adam::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7EC0_4A11);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let sample = data.sample(epoch, i)?;
            let prep = sample.prepare()?;
            let target: Vec<Array2<f64>> = sample.target.iter().map(|t| t / prep.scale).collect();
            let mut g = Graph::new();
            let p = params.bind(&mut g, true);
            let fwd = net.forward(&mut g, &p, &prep)?;
            let loss = match mapping {
                None => loss_total(&mut g, fwd.magnitude, &target, &opts.weights, None)?,
                Some((m, times)) => {
                    let mp = m.params.bind(&mut g, false);
                    let gd = Guidance {
                        net: &m.net,
                        params: &mp,
                        times,
                        input_scale: prep.scale / stack_scale(&sample.target),
                    };
                    loss_total(&mut g, fwd.magnitude, &target, &opts.weights, Some(&gd))?
                }
            };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(ReconError::InvalidArgument(format!("non-finite loss at epoch {epoch}")));
            }
            total += value;
            g.backward(loss)?;
            adam.step(&mut params, &p.gradients(&g))?;
        }
        let val_psnr = if val.is_empty() { None } else { Some(validation_psnr(net, &params, val)?) };
        let entry = EpochLog { epoch, loss: total / data.len() as f64, val_psnr };
        log(&entry);
        logs.push(entry);
    }
    let tracked = adam.tracked().cloned().collect();
    Ok(ReconRun { params, logs, tracked })
}
