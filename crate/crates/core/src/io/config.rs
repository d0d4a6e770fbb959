//! `key = value` run configuration.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::phantom::{AugmentParams, ProtocolSpec};
use crate::relaxometry::{RelaxKind, RelaxTimes};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerKind {
    UNet,
    ConvGru,
    None,
}

impl std::str::FromStr for RegularizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" => Ok(Self::UNet),
            "convgru" | "conv_gru" | "gru" => Ok(Self::ConvGru),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown regularizer `{s}`"))),
        }
    }
}

impl std::fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UNet => "unet",
            Self::ConvGru => "convgru",
            Self::None => "none",
        })
    }
}

/// All run settings. Defaults follow the published training setup where it
/// is known and desk-scale choices elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub kind: RelaxKind,
    pub nx: usize,
    pub ny: usize,
    pub n_coils: usize,
    pub acceleration: usize,
    pub acs_width: usize,
    /// Relaxation times in ms; empty means the kind's defaults.
    pub times: Vec<f64>,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Energy SNR of the simulated measurement; infinite for noiseless.
    pub snr: f64,
    pub unrolled_layers: usize,
    pub regularizer: RegularizerKind,
    pub shared_weights: bool,
    pub alpha_init: f64,
    pub reg_base_filters: usize,
    pub reg_pooling_levels: usize,
    pub map_base_filters: usize,
    pub map_pooling_levels: usize,
    pub refiner_base_filters: usize,
    pub refiner_pooling_levels: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    pub map_lr: f64,
    pub map_epochs: usize,
    pub recon_lr: f64,
    pub recon_epochs: usize,
    pub aug_probability: f64,
    pub aug_rotation_deg: f64,
    pub aug_translation: f64,
    pub aug_shear_deg: f64,
    pub aug_flip: bool,
    /// Lower end of the random training SNR; infinite disables noise augmentation.
    pub noise_snr_min: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: RelaxKind::T1,
            nx: 64,
            ny: 64,
            n_coils: 10,
            acceleration: 4,
            acs_width: 24,
            times: Vec::new(),
            seed: 0,
            n_train: 16,
            n_test: 4,
            snr: f64::INFINITY,
            unrolled_layers: 10,
            regularizer: RegularizerKind::UNet,
            shared_weights: false,
            alpha_init: 1.0,
            reg_base_filters: 256,
            reg_pooling_levels: 1,
            map_base_filters: 32,
            map_pooling_levels: 2,
            refiner_base_filters: 8,
            refiner_pooling_levels: 1,
            gamma1: 0.2,
            gamma2: 0.8,
            gamma3: 0.01,
            gamma4: 0.1,
            map_lr: 1e-4,
            map_epochs: 200,
            recon_lr: 1e-3,
            recon_epochs: 400,
            aug_probability: 0.4,
            aug_rotation_deg: 45.0,
            aug_translation: 0.1,
            aug_shear_deg: 20.0,
            aug_flip: true,
            noise_snr_min: 6.67,
        }
    }
}

pub const KEYS: &[&str] = &[
    "kind",
    "nx",
    "ny",
    "n_coils",
    "acceleration",
    "acs_width",
    "times",
    "seed",
    "n_train",
    "n_test",
    "snr",
    "unrolled_layers",
    "regularizer",
    "shared_weights",
    "alpha_init",
    "reg_base_filters",
    "reg_pooling_levels",
    "map_base_filters",
    "map_pooling_levels",
    "refiner_base_filters",
    "refiner_pooling_levels",
    "gamma1",
    "gamma2",
    "gamma3",
    "gamma4",
    "map_lr",
    "map_epochs",
    "recon_lr",
    "recon_epochs",
    "aug_probability",
    "aug_rotation_deg",
    "aug_translation",
    "aug_shear_deg",
    "aug_flip",
    "noise_snr_min",
];

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    match v.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        _ => v.parse::<f64>().map_err(|_| format!("`{v}` is not a number")),
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse().map_err(|_| format!("`{v}` is not a nonnegative integer"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: no + 1, message };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(err(format!("duplicate key `{k}`")));
            }
            cfg.set(k, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, k: &str, v: &str) -> std::result::Result<(), String> {
        match k {
            "kind" => self.kind = v.parse().map_err(|e: Error| e.to_string())?,
            "nx" => self.nx = parse_usize(v)?,
            "ny" => self.ny = parse_usize(v)?,
            "n_coils" => self.n_coils = parse_usize(v)?,
            "acceleration" => self.acceleration = parse_usize(v)?,
            "acs_width" => self.acs_width = parse_usize(v)?,
            "times" => {
                self.times = v
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(parse_f64)
                    .collect::<std::result::Result<_, _>>()?
            }
            "seed" => self.seed = v.parse().map_err(|_| format!("`{v}` is not a seed"))?,
            "n_train" => self.n_train = parse_usize(v)?,
            "n_test" => self.n_test = parse_usize(v)?,
            "snr" => self.snr = parse_f64(v)?,
            "unrolled_layers" => self.unrolled_layers = parse_usize(v)?,
            "regularizer" => self.regularizer = v.parse().map_err(|e: Error| e.to_string())?,
            "shared_weights" => self.shared_weights = parse_bool(v)?,
            "alpha_init" => self.alpha_init = parse_f64(v)?,
            "reg_base_filters" => self.reg_base_filters = parse_usize(v)?,
            "reg_pooling_levels" => self.reg_pooling_levels = parse_usize(v)?,
            "map_base_filters" => self.map_base_filters = parse_usize(v)?,
            "map_pooling_levels" => self.map_pooling_levels = parse_usize(v)?,
            "refiner_base_filters" => self.refiner_base_filters = parse_usize(v)?,
            "refiner_pooling_levels" => self.refiner_pooling_levels = parse_usize(v)?,
            "gamma1" => self.gamma1 = parse_f64(v)?,
            "gamma2" => self.gamma2 = parse_f64(v)?,
            "gamma3" => self.gamma3 = parse_f64(v)?,
            "gamma4" => self.gamma4 = parse_f64(v)?,
            "map_lr" => self.map_lr = parse_f64(v)?,
            "map_epochs" => self.map_epochs = parse_usize(v)?,
            "recon_lr" => self.recon_lr = parse_f64(v)?,
            "recon_epochs" => self.recon_epochs = parse_usize(v)?,
            "aug_probability" => self.aug_probability = parse_f64(v)?,
            "aug_rotation_deg" => self.aug_rotation_deg = parse_f64(v)?,
            "aug_translation" => self.aug_translation = parse_f64(v)?,
            "aug_shear_deg" => self.aug_shear_deg = parse_f64(v)?,
            "aug_flip" => self.aug_flip = parse_bool(v)?,
            "noise_snr_min" => self.noise_snr_min = parse_f64(v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { line: 0, message: m });
        for (name, v) in
            [("gamma1", self.gamma1), ("gamma2", self.gamma2), ("gamma3", self.gamma3), ("gamma4", self.gamma4)]
        {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and ≥ 0, got {v}"));
            }
        }
        for (name, v) in [("map_lr", self.map_lr), ("recon_lr", self.recon_lr), ("alpha_init", self.alpha_init)] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("nx", self.nx),
            ("ny", self.ny),
            ("n_coils", self.n_coils),
            ("acceleration", self.acceleration),
            ("map_epochs", self.map_epochs),
            ("recon_epochs", self.recon_epochs),
            ("unrolled_layers", self.unrolled_layers),
            ("reg_base_filters", self.reg_base_filters),
            ("map_base_filters", self.map_base_filters),
            ("refiner_base_filters", self.refiner_base_filters),
            ("n_train", self.n_train),
        ] {
            if v == 0 {
                return bad(format!("{name} must be ≥ 1"));
            }
        }
        if self.acs_width >= self.ny {
            return bad(format!("acs_width {} must be below ny {}", self.acs_width, self.ny));
        }
        if self.snr.is_nan() || self.snr <= 0.0 || self.noise_snr_min.is_nan() || self.noise_snr_min <= 0.0 {
            return bad("snr and noise_snr_min must be positive".into());
        }
        self.relax_times()?;
        self.augment_params().validate()?;
        Ok(())
    }

    pub fn relax_times(&self) -> Result<RelaxTimes> {
        if self.times.is_empty() {
            Ok(RelaxTimes::default_for(self.kind))
        } else {
            RelaxTimes::new(self.kind, self.times.clone())
        }
    }

    pub fn protocol(&self) -> Result<ProtocolSpec> {
        Ok(ProtocolSpec {
            times: self.relax_times()?,
            n_coils: self.n_coils,
            acceleration: self.acceleration,
            acs_width: self.acs_width,
            snr: self.snr,
        })
    }

    pub fn augment_params(&self) -> AugmentParams {
        AugmentParams {
            probability: self.aug_probability,
            rotation_deg: self.aug_rotation_deg,
            translation: self.aug_translation,
            shear_deg: self.aug_shear_deg,
            flip: self.aug_flip,
        }
    }

    /// Serializes every key; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let times = if self.times.is_empty() {
            self.relax_times().map(|t| t.times().to_vec()).unwrap_or_default()
        } else {
            self.times.clone()
        };
        let times: Vec<String> = times.iter().map(|t| t.to_string()).collect();
        let kv: Vec<(&str, String)> = vec![
            ("kind", self.kind.to_string()),
            ("nx", self.nx.to_string()),
            ("ny", self.ny.to_string()),
            ("n_coils", self.n_coils.to_string()),
            ("acceleration", self.acceleration.to_string()),
            ("acs_width", self.acs_width.to_string()),
            ("times", times.join(", ")),
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("snr", self.snr.to_string()),
            ("unrolled_layers", self.unrolled_layers.to_string()),
            ("regularizer", self.regularizer.to_string()),
            ("shared_weights", self.shared_weights.to_string()),
            ("alpha_init", self.alpha_init.to_string()),
            ("reg_base_filters", self.reg_base_filters.to_string()),
            ("reg_pooling_levels", self.reg_pooling_levels.to_string()),
            ("map_base_filters", self.map_base_filters.to_string()),
            ("map_pooling_levels", self.map_pooling_levels.to_string()),
            ("refiner_base_filters", self.refiner_base_filters.to_string()),
            ("refiner_pooling_levels", self.refiner_pooling_levels.to_string()),
            ("gamma1", self.gamma1.to_string()),
            ("gamma2", self.gamma2.to_string()),
            ("gamma3", self.gamma3.to_string()),
            ("gamma4", self.gamma4.to_string()),
            ("map_lr", self.map_lr.to_string()),
            ("map_epochs", self.map_epochs.to_string()),
            ("recon_lr", self.recon_lr.to_string()),
            ("recon_epochs", self.recon_epochs.to_string()),
            ("aug_probability", self.aug_probability.to_string()),
            ("aug_rotation_deg", self.aug_rotation_deg.to_string()),
            ("aug_translation", self.aug_translation.to_string()),
            ("aug_shear_deg", self.aug_shear_deg.to_string()),
            ("aug_flip", self.aug_flip.to_string()),
            ("noise_snr_min", self.noise_snr_min.to_string()),
        ];
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
