//! A small seeded end-to-end experiment: simulate phantom slices, pre-train
//! the mapping network, train reconstruction networks at several
//! accelerations (with and without relaxometry guidance), and score them.

use std::time::{Duration, Instant};

use ndarray::Array2;
use qmri_core::io::RegularizerKind;
use qmri_core::phantom::{simulate_slice, ProtocolSpec, SimulatedSlice};
use qmri_core::relaxometry::{fit_map, ParameterMap, RelaxKind, RelaxTimes};
use qmri_core::stats::percentile;

use crate::error::{ReconError, Result};
use crate::losses::LossWeights;
use crate::mapping::{train_mapping, MappingConfig, MappingModel, TrainOptions};
use crate::train::{mean_psnr, reconstruct_all, train_recon, EpochLog, ReconTraining, TrainSample};
use crate::varnet::{RefinerConfig, VarNet, VarNetConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub size: usize,
    pub n_coils: usize,
    pub kind: RelaxKind,
    pub acs_width: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub net: VarNetConfig,
    pub recon_epochs: usize,
    pub recon_lr: f64,
    pub map_base_filters: usize,
    pub map_pooling_levels: usize,
    pub map_epochs: usize,
    pub map_lr: f64,
    pub accelerations: Vec<usize>,
    /// Acceleration of the run repeated with `guided` weights.
    pub ablation_acceleration: usize,
    pub unguided: LossWeights,
    pub guided: LossWeights,
}

impl BenchmarkConfig {
    /// 32×32 T2 phantoms, 4 coils, three unrolled layers.
    pub fn toy() -> Self {
        Self {
            size: 32,
            n_coils: 4,
            kind: RelaxKind::T2,
            acs_width: 6,
            n_train: 16,
            n_test: 4,
            seed: 2024,
            net: VarNetConfig {
                unrolled_layers: 3,
                regularizer: RegularizerKind::UNet,
                alpha_init: 1.0,
                shared_weights: false,
                base_filters: 8,
                pooling_levels: 2,
                refiner: Some(RefinerConfig { base_filters: 4, pooling_levels: 1 }),
            },
            recon_epochs: 30,
            recon_lr: 1e-3,
            map_base_filters: 16,
            map_pooling_levels: 1,
            map_epochs: 150,
            map_lr: 1e-3,
            accelerations: vec![4, 8, 10],
            ablation_acceleration: 4,
            unguided: LossWeights::recon_only(0.2, 0.8),
            guided: LossWeights::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub acceleration: usize,
    pub weights: LossWeights,
    /// Mean test PSNR (dB) of the zero-filled reconstruction.
    pub zero_filled_psnr: f64,
    pub trained_psnr: f64,
    /// Mean NMSE of least-squares parameter maps fitted to the
    /// reconstructions, over parameter channels and test slices.
    pub map_nmse: f64,
    pub logs: Vec<EpochLog>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct MappingResult {
    pub losses: Vec<f64>,
    /// Median over object voxels of |T2_net − T2_fit| / T2_fit on the
    /// fully sampled test stacks. `None` for T1 protocols.
    pub t2_median_rel_error: Option<f64>,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub mapping: MappingResult,
    pub runs: Vec<RunResult>,
    pub elapsed: Duration,
}

impl BenchmarkReport {
    pub fn run(&self, acceleration: usize, guided: bool) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.acceleration == acceleration && r.weights.uses_mapping() == guided)
    }
}

struct Split {
    train: Vec<SimulatedSlice>,
    test: Vec<SimulatedSlice>,
}

fn simulate(cfg: &BenchmarkConfig, acceleration: usize) -> Result<Split> {
    let mut proto = ProtocolSpec::new(cfg.kind);
    proto.n_coils = cfg.n_coils;
    proto.acceleration = acceleration;
    proto.acs_width = cfg.acs_width;
    let make = |offset: u64, n: usize| -> Result<Vec<SimulatedSlice>> {
        (0..n as u64).map(|i| Ok(simulate_slice(cfg.size, cfg.size, &proto, cfg.seed + offset + i)?)).collect()
    };
    Ok(Split { train: make(0, cfg.n_train)?, test: make(100_000, cfg.n_test)? })
}

fn samples(slices: &[SimulatedSlice]) -> Vec<TrainSample> {
    slices.iter().map(TrainSample::from_slice).collect()
}

/// Normalized squared error over the voxels of `mask`.
fn masked_nmse(est: &Array2<f64>, truth: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((e, t), &m) in est.iter().zip(truth).zip(mask) {
        if m {
            num += (e - t).powi(2);
            den += t * t;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Mean NMSE of the fitted primary parameters (A and T2, or A, B and T1*).
fn map_nmse(fitted: &ParameterMap, truth: &ParameterMap, mask: &Array2<bool>) -> f64 {
    let n = truth.kind().n_params();
    let pairs: Vec<_> = fitted.channels().into_iter().zip(truth.channels()).take(n).collect();
    pairs.iter().map(|((_, e), (_, t))| masked_nmse(e, t, mask)).sum::<f64>() / n as f64
}

fn mapping_oracle_error(model: &MappingModel, test: &[SimulatedSlice], times: &RelaxTimes) -> Result<Option<f64>> {
    if times.kind() != RelaxKind::T2 {
        return Ok(None);
    }
    let mut errs = Vec::new();
    for s in test {
        let net = model.predict(&s.target, times)?;
        let fit = fit_map(&s.target, times, &s.phantom.mask)?;
        for ((n, f), (&m, &flag)) in
            net.primary().iter().zip(fit.map.primary()).zip(s.phantom.mask.iter().zip(&fit.flagged))
        {
            if m && !flag && *f > 0.0 {
                errs.push((n - f).abs() / f);
            }
        }
    }
    if errs.is_empty() {
        return Err(ReconError::InvalidArgument("no object voxels to compare".into()));
    }
    Ok(Some(percentile(errs, 0.5)))
}

fn recon_run(
    cfg: &BenchmarkConfig,
    split: &Split,
    acceleration: usize,
    weights: LossWeights,
    mapping: Option<&MappingModel>,
    times: &RelaxTimes,
) -> Result<RunResult> {
    let start = Instant::now();
    let train = samples(&split.train);
    let test = samples(&split.test);
    let net = VarNet::new(cfg.net.clone(), times.len())?;
    let opts = ReconTraining {
        weights,
        epochs: cfg.recon_epochs,
        lr: cfg.recon_lr,
        seed: cfg.seed,
        mapping: mapping.map(|m| (m, times)),
    };
    let run = train_recon(&net, net.init(cfg.seed), &train, &[], &opts, |_| {})?;
    let refs: Vec<_> = test.iter().map(|s| s.target.clone()).collect();
    let zf = test.iter().map(TrainSample::zero_filled).collect::<Result<Vec<_>>>()?;
    let rec = reconstruct_all(&net, &run.params, &test)?;
    let mut nmse = 0.0;
    for (r, s) in rec.iter().zip(&split.test) {
        let fit = fit_map(r, times, &s.phantom.mask)?;
        nmse += map_nmse(&fit.map, &s.truth(), &s.phantom.mask);
    }
    Ok(RunResult {
        acceleration,
        weights,
        zero_filled_psnr: mean_psnr(&zf, &refs)?,
        trained_psnr: mean_psnr(&rec, &refs)?,
        map_nmse: nmse / split.test.len() as f64,
        logs: run.logs,
        elapsed: start.elapsed(),
    })
}

/// Runs everything. Unguided runs train in parallel with the mapping
/// network; the guided run starts once M is available.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let start = Instant::now();
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(ReconError::EmptyDataset);
    }
    let times = RelaxTimes::default_for(cfg.kind);
    let mut accels = cfg.accelerations.clone();
    if !accels.contains(&cfg.ablation_acceleration) {
        accels.push(cfg.ablation_acceleration);
    }
    let splits = accels.iter().map(|&r| Ok((r, simulate(cfg, r)?))).collect::<Result<Vec<_>>>()?;
    let split_for = |r: usize| &splits.iter().find(|(a, _)| *a == r).expect("simulated").1;

    std::thread::scope(|scope| {
        let unguided: Vec<_> = cfg
            .accelerations
            .iter()
            .map(|&r| {
                let times = &times;
                scope.spawn(move || recon_run(cfg, split_for(r), r, cfg.unguided, None, times))
            })
            .collect();
        let guided = scope.spawn(|| -> Result<(MappingResult, RunResult)> {
            let t0 = Instant::now();
            let split = split_for(cfg.ablation_acceleration);
            let stacks: Vec<_> = split.train.iter().map(|s| s.target.clone()).collect();
            let mcfg = MappingConfig::new(&times, cfg.map_base_filters, cfg.map_pooling_levels);
            let opts = TrainOptions { epochs: cfg.map_epochs, lr: cfg.map_lr, seed: cfg.seed };
            let (model, losses) = train_mapping(&stacks, &times, mcfg, &opts, |_, _| {})?;
            let err = mapping_oracle_error(&model, &split.test, &times)?;
            let mapping = MappingResult { losses, t2_median_rel_error: err, elapsed: t0.elapsed() };
            let run = recon_run(cfg, split, cfg.ablation_acceleration, cfg.guided, Some(&model), &times)?;
            Ok((mapping, run))
        });
        let mut runs =
            unguided.into_iter().map(|h| h.join().expect("benchmark thread panicked")).collect::<Result<Vec<_>>>()?;
        let (mapping, g) = guided.join().expect("benchmark thread panicked")?;
        runs.push(g);
        Ok(BenchmarkReport { mapping, runs, elapsed: start.elapsed() })
    })
}
