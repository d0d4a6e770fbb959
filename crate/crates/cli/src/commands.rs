use std::path::{Path, PathBuf};

use ndarray::{Array2, Zip};
use qmri_core::io::{
    write_atomic, write_container, write_csv, write_metrics_csv, write_pgm, ArrayData, Container, MetricRow, RunConfig,
};
use qmri_core::metrics::{nmse, psnr_with_peak, ssim_with_range, MetricReport};
use qmri_core::mri_ops::SamplingMask;
use qmri_core::phantom::{make_mask, simulate_slice};
use qmri_core::relaxometry::{fit_map, ParameterMap};
use qmri_recon::varnet::zero_filled_with;
use qmri_recon::{
    train_mapping, train_recon, LossWeights, MappingConfig, MappingModel, ReconModel, ReconTraining, RefinerConfig,
    TrainOptions, TrainSample, VarNet, VarNetConfig,
};

use crate::augment::AugmentedData;
use crate::data::{self, SliceFile};
use crate::error::{CliError, Result};
use crate::*;

/// Offset between the seeds of training and test slices.
pub const TEST_SEED_OFFSET: u64 = 100_000;

pub fn execute(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Mask(a) => mask(a),
        Command::TrainMap(a) => train_map(a),
        Command::TrainRecon(a) => train_recon_cmd(a),
        Command::Recon(a) => recon(a),
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let cfg = RunConfig::from_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| qmri_core::Error::Io { path: path.to_path_buf(), source: e }.into())
}

fn read_split(dir: &Path) -> Result<Vec<SliceFile>> {
    let files = data::slice_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no slices in {}", dir.display())));
    }
    files.iter().map(|p| SliceFile::read(p)).collect()
}

pub fn varnet_config(cfg: &RunConfig) -> VarNetConfig {
    VarNetConfig {
        unrolled_layers: cfg.unrolled_layers,
        regularizer: cfg.regularizer,
        alpha_init: cfg.alpha_init,
        shared_weights: cfg.shared_weights,
        base_filters: cfg.reg_base_filters,
        pooling_levels: cfg.reg_pooling_levels,
        refiner: Some(RefinerConfig {
            base_filters: cfg.refiner_base_filters,
            pooling_levels: cfg.refiner_pooling_levels,
        }),
    }
}

pub fn loss_weights(cfg: &RunConfig) -> LossWeights {
    LossWeights { gamma1: cfg.gamma1, gamma2: cfg.gamma2, gamma3: cfg.gamma3, gamma4: cfg.gamma4 }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let proto = cfg.protocol()?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("config.txt"), cfg.to_text().as_bytes())?;
    for (split, n, offset) in [("train", cfg.n_train, 0), ("test", cfg.n_test, TEST_SEED_OFFSET)] {
        let dir = a.out.join(split);
        create_dir(&dir)?;
        for i in 0..n {
            let s = simulate_slice(cfg.nx, cfg.ny, &proto, cfg.seed.wrapping_add(offset + i as u64))?;
            write_container(dir.join(data::slice_name(i)), &SliceFile::from_slice(&s).to_container()?)?;
            write_container(dir.join(data::phantom_name(i)), &data::phantom_container(&s.phantom)?)?;
        }
    }
    println!("simulated {} training and {} test slices in {}", cfg.n_train, cfg.n_test, a.out.display());
    Ok(())
}

fn mask(a: &MaskArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let m = make_mask(cfg.ny, cfg.acceleration, cfg.acs_width, a.seed.unwrap_or(cfg.seed))?;
    write_container(&a.out, &mask_container(&m)?)?;
    println!("{} of {} lines sampled", m.sampled_count(), m.len());
    Ok(())
}

fn mask_container(m: &SamplingMask) -> Result<Container> {
    use qmri_core::io::NamedArray;
    let mut c = Container::new();
    c.insert("mask", NamedArray::from_bools(m.lines()))?;
    c.insert("acs_width", NamedArray::scalar(m.acs_width() as f64))?;
    c.insert("acceleration", NamedArray::scalar(m.acceleration() as f64))?;
    Ok(c)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn train_map(a: &TrainMapArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let times = cfg.relax_times()?;
    let files = read_split(&a.data.join("train"))?;
    let stacks: Vec<_> = files.into_iter().map(|f| f.target).collect();
    let mcfg = MappingConfig::new(&times, cfg.map_base_filters, cfg.map_pooling_levels);
    let opts = TrainOptions { epochs: cfg.map_epochs, lr: cfg.map_lr, seed: cfg.seed };
    let (model, losses) = train_mapping(&stacks, &times, mcfg, &opts, |e, l| eprintln!("map epoch {e}: loss {l:.6}"))?;
    model.save(&a.out, &times)?;
    if let Some(log) = &a.log {
        let rows: Vec<Vec<String>> = losses.iter().enumerate().map(|(e, l)| vec![e.to_string(), fmt_f64(*l)]).collect();
        write_csv(log, "epoch,loss", &rows)?;
    }
    Ok(())
}

fn train_recon_cmd(a: &TrainReconArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let times = cfg.relax_times()?;
    let weights = loss_weights(&cfg);
    let mapping = match &a.map {
        Some(p) => Some(MappingModel::load(p)?),
        None if weights.uses_mapping() => {
            return Err(CliError::Usage("gamma3 or gamma4 is nonzero; pass --map".into()));
        }
        None => None,
    };
    if let Some((_, t)) = &mapping {
        if t != &times {
            return Err(CliError::Usage("mapping checkpoint was trained for another protocol".into()));
        }
    }
    let train = read_split(&a.data.join("train"))?;
    let val: Vec<TrainSample> = read_split(&a.data.join("test"))?.iter().map(SliceFile::sample).collect();
    let net = VarNet::new(varnet_config(&cfg), times.len())?;
    let params = net.init(cfg.seed);
    let dataset = AugmentedData { files: train, aug: cfg.augment_params(), snr_min: cfg.noise_snr_min, seed: cfg.seed };
    let opts = ReconTraining {
        weights,
        epochs: cfg.recon_epochs,
        lr: cfg.recon_lr,
        seed: cfg.seed,
        mapping: mapping.as_ref().map(|(m, t)| (m, t)),
    };
    let run = train_recon(&net, params, &dataset, &val, &opts, |l| match l.val_psnr {
        Some(p) => eprintln!("recon epoch {}: loss {:.6}, validation PSNR {p:.2} dB", l.epoch, l.loss),
        None => eprintln!("recon epoch {}: loss {:.6}", l.epoch, l.loss),
    })?;
    if let Some(log) = &a.log {
        let rows: Vec<Vec<String>> = run
            .logs
            .iter()
            .map(|l| vec![l.epoch.to_string(), fmt_f64(l.loss), l.val_psnr.map(fmt_f64).unwrap_or_default()])
            .collect();
        write_csv(log, "epoch,loss,val_psnr_db", &rows)?;
    }
    ReconModel { net, params: run.params }.save(&a.out)?;
    Ok(())
}

fn recon(a: &ReconArgs) -> Result<()> {
    let model = a.model.as_ref().map(ReconModel::load).transpose()?;
    let paths = data::slice_files(&a.input)?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no slices in {}", a.input.display())));
    }
    create_dir(&a.out)?;
    for p in &paths {
        let f = SliceFile::read(p)?;
        let s0 = f.sample().initial_maps()?;
        let images = match &model {
            Some(m) => m.net.reconstruct(&m.params, &f.kspace, &f.mask, &s0)?.images,
            None => zero_filled_with(&f.kspace, &f.mask, &s0)?,
        };
        write_container(a.out.join(p.file_name().unwrap_or_default()), &data::recon_container(&images, &f.times)?)?;
    }
    println!("reconstructed {} slices into {}", paths.len(), a.out.display());
    Ok(())
}

/// Voxels whose largest magnitude reaches `threshold` times the stack peak.
fn signal_mask(stack: &[Array2<f64>], threshold: f64) -> Array2<bool> {
    let dim = stack.first().map(|s| s.dim()).unwrap_or((0, 0));
    let mut peak = Array2::<f64>::zeros(dim);
    for s in stack {
        Zip::from(&mut peak).and(s).for_each(|p, &v| *p = p.max(v));
    }
    let top = peak.iter().copied().fold(0.0, f64::max);
    peak.mapv(|v| top > 0.0 && v >= threshold * top)
}

fn masked(map: &ParameterMap, mask: &Array2<bool>) -> Result<ParameterMap> {
    let m = |a: &Array2<f64>| Zip::from(a).and(mask).map_collect(|&v, &k| if k { v } else { 0.0 });
    Ok(match map {
        ParameterMap::T1 { a, b, t1_star, .. } => ParameterMap::t1(m(a), m(b), m(t1_star))?,
        ParameterMap::T2 { a, t2 } => ParameterMap::t2(m(a), m(t2))?,
    })
}

fn fit(a: &FitArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(CliError::Usage(format!("--threshold must lie in [0, 1], got {}", a.threshold)));
    }
    let model = match (a.method, &a.model) {
        (FitMethod::Network, Some(p)) => Some(MappingModel::load(p)?),
        (FitMethod::Network, None) => return Err(CliError::Usage("--method network needs --model".into())),
        (FitMethod::Lm, _) => None,
    };
    let paths = data::slice_files(&a.input)?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no slices in {}", a.input.display())));
    }
    create_dir(&a.out)?;
    for p in &paths {
        let (stack, times) = data::read_magnitudes(p)?;
        let mask = signal_mask(&stack, a.threshold);
        let c = match &model {
            Some((m, t)) => {
                if t != &times {
                    return Err(CliError::Usage(format!("{}: protocol differs from the checkpoint", p.display())));
                }
                let map = masked(&m.predict(&stack, &times)?, &mask)?;
                data::map_container(&map, None)?
            }
            None => {
                let fit = fit_map(&stack, &times, &mask)?;
                data::map_container(&fit.map, Some(&fit.flagged))?
            }
        };
        write_container(a.out.join(p.file_name().unwrap_or_default()), &c)?;
    }
    println!("fitted {} stacks into {}", paths.len(), a.out.display());
    Ok(())
}

fn file_index(p: &Path) -> Result<usize> {
    p.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix("slice_"))
        .and_then(|n| n.strip_suffix(".qmrd"))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| CliError::Usage(format!("unexpected file name {}", p.display())))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let paths = data::slice_files(&a.data)?;
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no slices in {}", a.data.display())));
    }
    let mut rows = Vec::new();
    let mut map_rows = Vec::new();
    for p in &paths {
        let name = p.file_name().unwrap_or_default();
        let slice = file_index(p)?;
        let f = SliceFile::read(p)?;
        let (est, _) = data::read_magnitudes(&a.recon.join(name))?;
        if est.len() != f.target.len() {
            return Err(CliError::Usage(format!(
                "{}: {} images for {} baselines",
                name.to_string_lossy(),
                est.len(),
                f.target.len()
            )));
        }
        let reports = est
            .iter()
            .zip(&f.target)
            .map(|(e, t)| MetricReport::compute(e, t))
            .collect::<qmri_core::Result<Vec<_>>>()?;
        let r = MetricReport::mean(&reports).expect("at least one baseline");
        let acceleration = f.mask.acceleration();
        rows.push(MetricRow {
            dataset: a.name.clone(),
            acceleration,
            slice,
            psnr_db: r.psnr,
            nmse: r.nmse,
            ssim: r.ssim,
        });
        if let Some(maps) = &a.maps {
            let (truth, object) = data::read_truth(&data::phantom_path(p), f.times.kind())?;
            let (kind, est) = data::read_primary(&maps.join(name))?;
            if kind != f.times.kind() {
                return Err(CliError::Usage(format!(
                    "{}: map kind {kind} for a {} protocol",
                    name.to_string_lossy(),
                    f.times.kind()
                )));
            }
            let keep = |m: &Array2<f64>| Zip::from(m).and(&object).map_collect(|&v, &k| if k { v } else { 0.0 });
            let (est, truth) = (keep(&est), keep(truth.primary()));
            let peak = truth.iter().copied().fold(0.0, f64::max);
            map_rows.push(MetricRow {
                dataset: format!("{}_{kind}", a.name),
                acceleration,
                slice,
                psnr_db: psnr_with_peak(&est, &truth, peak)?,
                nmse: nmse(&est, &truth)?,
                ssim: ssim_with_range(&est, &truth, peak)?,
            });
        }
    }
    rows.extend(map_rows);
    write_metrics_csv(&a.out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.out.display());
    Ok(())
}

fn pgm_name(entry: &str, index: Option<usize>) -> String {
    let clean: String =
        entry.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect();
    match index {
        Some(i) => format!("{clean}_{i:02}.pgm"),
        None => format!("{clean}.pgm"),
    }
}

/// Every 2-D image of the container, as magnitudes. Rank-3 entries give one
/// image per leading index; scalars, vectors and 4-D k-space are skipped.
fn report(a: &ReportArgs) -> Result<()> {
    let c = qmri_core::io::read_container(&a.input)?;
    create_dir(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, arr) in c.iter() {
        let mags = match &arr.data {
            ArrayData::C64(_) => arr.to_complex()?.mapv(|z| z.norm()),
            _ => arr.to_real()?,
        };
        match mags.ndim() {
            2 => {
                let p = a.out.join(pgm_name(name, None));
                write_pgm(&p, &mags.into_dimensionality().map_err(|e| qmri_core::Error::Format(e.to_string()))?)?;
                written.push(p);
            }
            3 => {
                for (i, img) in mags.outer_iter().enumerate() {
                    let p = a.out.join(pgm_name(name, Some(i)));
                    write_pgm(
                        &p,
                        &img.to_owned().into_dimensionality().map_err(|e| qmri_core::Error::Format(e.to_string()))?,
                    )?;
                    written.push(p);
                }
            }
            _ => {}
        }
    }
    println!("wrote {} images to {}", written.len(), a.out.display());
    Ok(())
}
