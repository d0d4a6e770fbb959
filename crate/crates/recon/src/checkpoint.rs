//! Model checkpoints as QMRD containers. Weights are stored as `f32` under
//! `param/<name>`; architecture settings are scalar entries.

use std::path::Path;

use qmri_core::io::{read_container, write_container, Container, NamedArray, RegularizerKind};
use qmri_core::relaxometry::{RelaxKind, RelaxTimes};
use qmri_nn::{ParamStore, Tensor};

use crate::error::{ReconError, Result};
use crate::mapping::{MappingConfig, MappingModel, MappingNet};
use crate::varnet::{RefinerConfig, VarNet, VarNetConfig};

const PARAM: &str = "param/";

pub fn params_to_container(c: &mut Container, params: &ParamStore) -> Result<()> {
    for (name, t) in params.iter() {
        let data = t.data().iter().map(|&v| v as f32).collect();
        c.insert(format!("{PARAM}{name}"), NamedArray::f32(t.shape().to_vec(), data)?)?;
    }
    Ok(())
}

pub fn params_from_container(c: &Container) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (name, arr) in c.iter() {
        if let Some(n) = name.strip_prefix(PARAM) {
            store.insert(n, Tensor::new(arr.dims.clone(), arr.to_vec()?)?);
        }
    }
    Ok(store)
}

fn scalar(c: &Container, name: &str) -> Result<f64> {
    let v = c.require(name)?.to_vec()?;
    match v.as_slice() {
        [x] if x.is_finite() => Ok(*x),
        _ => Err(ReconError::InvalidArgument(format!("`{name}` must be one finite value"))),
    }
}

fn count(c: &Container, name: &str) -> Result<usize> {
    let v = scalar(c, name)?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e6 {
        return Err(ReconError::InvalidArgument(format!("`{name}` = {v} is not a count")));
    }
    Ok(v as usize)
}

/// Every expected parameter present with the shape the architecture implies.
fn check_params(expected: &ParamStore, got: &ParamStore) -> Result<()> {
    for (name, t) in expected.iter() {
        match got.get(name) {
            Some(p) if p.shape() == t.shape() => {}
            Some(p) => {
                return Err(ReconError::Shape(format!("`{name}` has shape {:?}, expected {:?}", p.shape(), t.shape())))
            }
            None => return Err(ReconError::InvalidArgument(format!("checkpoint lacks `{name}`"))),
        }
    }
    if got.len() != expected.len() {
        return Err(ReconError::InvalidArgument("checkpoint has unexpected parameters".into()));
    }
    Ok(())
}

/// A reconstruction network with its weights.
#[derive(Clone, Debug)]
pub struct ReconModel {
    pub net: VarNet,
    pub params: ParamStore,
}

fn reg_code(k: RegularizerKind) -> f64 {
    match k {
        RegularizerKind::None => 0.0,
        RegularizerKind::UNet => 1.0,
        RegularizerKind::ConvGru => 2.0,
    }
}

impl ReconModel {
    pub fn to_container(&self) -> Result<Container> {
        let cfg = &self.net.cfg;
        let mut c = Container::new();
        let (rf, rp) = cfg.refiner.map_or((0, 0), |r| (r.base_filters, r.pooling_levels));
        for (k, v) in [
            ("model", 1.0),
            ("k_t", self.net.k_t as f64),
            ("unrolled_layers", cfg.unrolled_layers as f64),
            ("regularizer", reg_code(cfg.regularizer)),
            ("alpha_init", cfg.alpha_init),
            ("shared_weights", if cfg.shared_weights { 1.0 } else { 0.0 }),
            ("base_filters", cfg.base_filters as f64),
            ("pooling_levels", cfg.pooling_levels as f64),
            ("refiner_base_filters", rf as f64),
            ("refiner_pooling_levels", rp as f64),
        ] {
            c.insert(k, NamedArray::scalar(v))?;
        }
        params_to_container(&mut c, &self.params)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if count(c, "model")? != 1 {
            return Err(ReconError::InvalidArgument("not a reconstruction checkpoint".into()));
        }
        let regularizer = match count(c, "regularizer")? {
            0 => RegularizerKind::None,
            1 => RegularizerKind::UNet,
            2 => RegularizerKind::ConvGru,
            n => return Err(ReconError::InvalidArgument(format!("unknown regularizer code {n}"))),
        };
        let rf = count(c, "refiner_base_filters")?;
        let cfg = VarNetConfig {
            unrolled_layers: count(c, "unrolled_layers")?,
            regularizer,
            alpha_init: scalar(c, "alpha_init")?,
            shared_weights: count(c, "shared_weights")? != 0,
            base_filters: count(c, "base_filters")?,
            pooling_levels: count(c, "pooling_levels")?,
            refiner: (rf > 0)
                .then(|| -> Result<RefinerConfig> {
                    Ok(RefinerConfig { base_filters: rf, pooling_levels: count(c, "refiner_pooling_levels")? })
                })
                .transpose()?,
        };
        let net = VarNet::new(cfg, count(c, "k_t")?)?;
        let params = params_from_container(c)?;
        check_params(&net.init(0), &params)?;
        Ok(Self { net, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(write_container(path, &self.to_container()?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }
}

impl MappingModel {
    pub fn to_container(&self, times: &RelaxTimes) -> Result<Container> {
        self.net.check_times(times)?;
        let cfg = &self.net.cfg;
        let mut c = Container::new();
        for (k, v) in [
            ("model", 2.0),
            ("kind", cfg.kind.code() as f64),
            ("base_filters", cfg.base_filters as f64),
            ("pooling_levels", cfg.pooling_levels as f64),
        ] {
            c.insert(k, NamedArray::scalar(v))?;
        }
        c.insert("times", NamedArray::from_slice(times.times()))?;
        params_to_container(&mut c, &self.params)?;
        Ok(c)
    }

    /// The model and the relaxation times it was trained for.
    pub fn from_container(c: &Container) -> Result<(Self, RelaxTimes)> {
        if count(c, "model")? != 2 {
            return Err(ReconError::InvalidArgument("not a mapping checkpoint".into()));
        }
        let code = count(c, "kind")?;
        let kind = u8::try_from(code)
            .ok()
            .and_then(RelaxKind::from_code)
            .ok_or_else(|| ReconError::InvalidArgument(format!("unknown protocol code {code}")))?;
        let times = RelaxTimes::new(kind, c.require("times")?.to_vec()?)?;
        let cfg = MappingConfig::new(&times, count(c, "base_filters")?, count(c, "pooling_levels")?);
        let net = MappingNet::new(cfg)?;
        let params = params_from_container(c)?;
        check_params(&net.init(0), &params)?;
        Ok((Self { net, params }, times))
    }

    pub fn save(&self, path: impl AsRef<Path>, times: &RelaxTimes) -> Result<()> {
        Ok(write_container(path, &self.to_container(times)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, RelaxTimes)> {
        Self::from_container(&read_container(path)?)
    }
}
