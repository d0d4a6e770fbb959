//! On-disk layout of simulated datasets and of reconstruction and fitting
//! outputs. A dataset directory holds `train/` and `test/`, each with
//! `slice_NNN.qmrd` (k-space) and `slice_NNN.phantom.qmrd` (ground truth).

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use qmri_core::io::{read_container, Container, NamedArray};
use qmri_core::mri_ops::{ComplexImage, MultiCoil, SamplingMask, SensitivityMaps, C64};
use qmri_core::phantom::{Phantom, SimulatedSlice};
use qmri_core::relaxometry::{ParameterMap, RelaxKind, RelaxTimes};
use qmri_recon::TrainSample;

use crate::error::{CliError, Result};

pub const SPLITS: [&str; 2] = ["train", "test"];

pub fn slice_name(i: usize) -> String {
    format!("slice_{i:03}.qmrd")
}

pub fn phantom_name(i: usize) -> String {
    format!("slice_{i:03}.phantom.qmrd")
}

/// Sorted `slice_NNN.qmrd` files of a directory, without the phantom files.
pub fn slice_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| qmri_core::Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("slice_") && n.ends_with(".qmrd") && !n.ends_with(".phantom.qmrd"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn phantom_path(slice: &Path) -> PathBuf {
    let name = slice.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    slice.with_file_name(name.replace(".qmrd", ".phantom.qmrd"))
}

fn stack_to_array(stack: &[MultiCoil]) -> Result<ArrayD<C64>> {
    let views: Vec<_> = stack.iter().map(|m| m.data().view()).collect();
    let a = ndarray::stack(Axis(0), &views).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(a.into_dyn())
}

fn array_to_stack(a: ArrayD<C64>) -> Result<Vec<MultiCoil>> {
    if a.ndim() != 4 {
        return Err(qmri_core::Error::Format(format!("k-space must be 4-D, got {:?}", a.shape())).into());
    }
    a.axis_iter(Axis(0)).map(|v| Ok(MultiCoil::new(v.to_owned().into_dimensionality().map_err(shape_err)?)?)).collect()
}

fn shape_err(e: ndarray::ShapeError) -> CliError {
    qmri_core::Error::Format(e.to_string()).into()
}

pub fn times_entries(c: &mut Container, times: &RelaxTimes) -> Result<()> {
    c.insert("times", NamedArray::from_slice(times.times()))?;
    c.insert("kind", NamedArray::scalar(times.kind().code() as f64))?;
    Ok(())
}

pub fn read_times(c: &Container) -> Result<RelaxTimes> {
    let code = c.require("kind")?.to_vec()?;
    let kind = match code.as_slice() {
        [k] => RelaxKind::from_code(*k as u8).filter(|_| k.fract() == 0.0),
        _ => None,
    }
    .ok_or_else(|| qmri_core::Error::Format("bad protocol kind entry".into()))?;
    Ok(RelaxTimes::new(kind, c.require("times")?.to_vec()?)?)
}

fn read_count(c: &Container, name: &str) -> Result<usize> {
    match c.require(name)?.to_vec()?.as_slice() {
        [v] if *v >= 0.0 && v.fract() == 0.0 && *v < 1e9 => Ok(*v as usize),
        _ => Err(qmri_core::Error::Format(format!("`{name}` must be one count")).into()),
    }
}

/// One simulated slice as stored on disk.
#[derive(Clone, Debug)]
pub struct SliceFile {
    pub kspace: Vec<MultiCoil>,
    pub kspace_full: Vec<MultiCoil>,
    pub mask: SamplingMask,
    pub coil_maps: SensitivityMaps,
    pub target: Vec<Array2<f64>>,
    pub times: RelaxTimes,
}

impl SliceFile {
    pub fn from_slice(s: &SimulatedSlice) -> Self {
        Self {
            kspace: s.kspace.clone(),
            kspace_full: s.kspace_full.clone(),
            mask: s.mask.clone(),
            coil_maps: s.sens.clone(),
            target: s.target.clone(),
            times: s.times.clone(),
        }
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.insert("kspace", NamedArray::from_complex(&stack_to_array(&self.kspace)?))?;
        c.insert("kspace_full", NamedArray::from_complex(&stack_to_array(&self.kspace_full)?))?;
        c.insert("mask", NamedArray::from_bools(self.mask.lines()))?;
        c.insert("acs_width", NamedArray::scalar(self.mask.acs_width() as f64))?;
        c.insert("acceleration", NamedArray::scalar(self.mask.acceleration() as f64))?;
        c.insert("coil_maps", NamedArray::from_complex3(self.coil_maps.maps()))?;
        c.insert("target", NamedArray::from_real_stack(&self.target)?)?;
        times_entries(&mut c, &self.times)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let lines: Vec<bool> = c.require("mask")?.to_vec()?.iter().map(|&v| v != 0.0).collect();
        let mask = SamplingMask::new(lines, read_count(c, "acs_width")?, read_count(c, "acceleration")?)?;
        let maps = c.require("coil_maps")?.to_complex()?.into_dimensionality().map_err(shape_err)?;
        let s = Self {
            kspace: array_to_stack(c.require("kspace")?.to_complex()?)?,
            kspace_full: array_to_stack(c.require("kspace_full")?.to_complex()?)?,
            mask,
            coil_maps: SensitivityMaps::new(maps)?,
            target: c.require("target")?.to_real_stack()?,
            times: read_times(c)?,
        };
        let k_t = s.times.len();
        if s.kspace.len() != k_t || s.kspace_full.len() != k_t || s.target.len() != k_t {
            return Err(qmri_core::Error::Format("stack lengths disagree with the relaxation times".into()).into());
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    pub fn sample(&self) -> TrainSample {
        TrainSample { kspace: self.kspace.clone(), mask: self.mask.clone(), target: self.target.clone() }
    }
}

pub fn phantom_container(p: &Phantom) -> Result<Container> {
    let mut c = Container::new();
    c.insert("A", NamedArray::from_real(&p.a))?;
    c.insert("B", NamedArray::from_real(&p.b))?;
    c.insert("T1star", NamedArray::from_real(&p.t1_star))?;
    c.insert("T2", NamedArray::from_real(&p.t2))?;
    c.insert("object_mask", NamedArray::from_real(&p.mask.mapv(|m| if m { 1.0 } else { 0.0 })))?;
    Ok(c)
}

/// Ground-truth map for `kind` and the object mask.
pub fn read_truth(path: &Path, kind: RelaxKind) -> Result<(ParameterMap, Array2<bool>)> {
    let c = read_container(path)?;
    let get = |n: &str| -> Result<Array2<f64>> { Ok(c.require(n)?.to_real2()?) };
    let mask = get("object_mask")?.mapv(|v| v >= 0.5);
    let map = match kind {
        RelaxKind::T1 => ParameterMap::t1(get("A")?, get("B")?, get("T1star")?)?,
        RelaxKind::T2 => ParameterMap::t2(get("A")?, get("T2")?)?,
    };
    Ok((map, mask))
}

/// Reconstructed stack: complex images, magnitudes and the protocol.
pub fn recon_container(images: &[ComplexImage], times: &RelaxTimes) -> Result<Container> {
    let mags: Vec<Array2<f64>> = images.iter().map(ComplexImage::magnitude).collect();
    let (h, w) = images.first().map(ComplexImage::shape).unwrap_or((0, 0));
    let mut flat = Vec::with_capacity(images.len() * h * w);
    for img in images {
        flat.extend(img.data().iter().copied());
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&[images.len(), h, w]), flat).map_err(shape_err)?;
    let mut c = Container::new();
    c.insert("image", NamedArray::from_complex(&arr))?;
    c.insert("magnitude", NamedArray::from_real_stack(&mags)?)?;
    times_entries(&mut c, times)?;
    Ok(c)
}

/// Magnitude stack and protocol from either a reconstruction (`magnitude`)
/// or a dataset slice (`target`).
pub fn read_magnitudes(path: &Path) -> Result<(Vec<Array2<f64>>, RelaxTimes)> {
    let c = read_container(path)?;
    let arr = match c.get("magnitude") {
        Some(a) => a,
        None => c.require("target")?,
    };
    Ok((arr.to_real_stack()?, read_times(&c)?))
}

pub fn map_container(map: &ParameterMap, flagged: Option<&Array2<bool>>) -> Result<Container> {
    let mut c = Container::new();
    c.insert("kind", NamedArray::scalar(map.kind().code() as f64))?;
    for (name, ch) in map.channels() {
        c.insert(name, NamedArray::from_real(ch))?;
    }
    if let Some(f) = flagged {
        c.insert("flagged", NamedArray::from_real(&f.mapv(|v| if v { 1.0 } else { 0.0 })))?;
    }
    Ok(c)
}

/// The clinically reported channel (`T1` or `T2`) of a map container.
pub fn read_primary(path: &Path) -> Result<(RelaxKind, Array2<f64>)> {
    let c = read_container(path)?;
    let code = c.require("kind")?.to_vec()?;
    let kind = code
        .first()
        .and_then(|&k| RelaxKind::from_code(k as u8))
        .ok_or_else(|| qmri_core::Error::Format("bad map kind".into()))?;
    let name = match kind {
        RelaxKind::T1 => "T1",
        RelaxKind::T2 => "T2",
    };
    Ok((kind, c.require(name)?.to_real2()?))
}
