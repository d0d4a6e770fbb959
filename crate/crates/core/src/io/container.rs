//! The QMRD array container.
//!
//! Layout (little-endian): `"QMRD"`, `u16` version, `u16` entry count, then per
//! entry a `u16` name length, the UTF-8 name, a `u8` dtype (0 = f32, 1 = c64
//! as interleaved f32 pairs), a `u8` rank, `rank` × `u32` dims and the payload.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::mri_ops::C64;

pub const MAGIC: [u8; 4] = *b"QMRD";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    C64(Vec<Complex32>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::C64(_) => 1,
        }
    }
}

/// An n-dimensional array as stored in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format(format!("dims {dims:?} not representable")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::LengthMismatch(format!("dims {dims:?} hold {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(dims, ArrayData::F32(data))
    }

    pub fn scalar(v: f64) -> Self {
        Self { dims: vec![1], data: ArrayData::F32(vec![v as f32]) }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { dims: vec![v.len()], data: ArrayData::F32(v.iter().map(|&x| x as f32).collect()) }
    }

    pub fn from_real(a: &Array2<f64>) -> Self {
        let (r, c) = a.dim();
        Self { dims: vec![r, c], data: ArrayData::F32(a.iter().map(|&x| x as f32).collect()) }
    }

    /// Stacks equally shaped 2-D arrays along a new leading axis.
    pub fn from_real_stack(stack: &[Array2<f64>]) -> Result<Self> {
        let dim = stack.first().map(|a| a.dim()).unwrap_or((0, 0));
        if stack.iter().any(|a| a.dim() != dim) {
            return Err(Error::Shape("stack entries differ in shape".into()));
        }
        let data = stack.iter().flat_map(|a| a.iter().map(|&x| x as f32)).collect();
        Ok(Self { dims: vec![stack.len(), dim.0, dim.1], data: ArrayData::F32(data) })
    }

    pub fn from_complex(a: &ArrayD<C64>) -> Self {
        Self {
            dims: a.shape().to_vec(),
            data: ArrayData::C64(a.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect()),
        }
    }

    pub fn from_complex3(a: &Array3<C64>) -> Self {
        Self::from_complex(&a.clone().into_dyn())
    }

    pub fn from_bools(a: &[bool]) -> Self {
        Self { dims: vec![a.len()], data: ArrayData::F32(a.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()) }
    }

    pub fn to_real(&self) -> Result<ArrayD<f64>> {
        match &self.data {
            ArrayData::F32(v) => Ok(ArrayD::from_shape_vec(IxDyn(&self.dims), v.iter().map(|&x| x as f64).collect())
                .expect("validated length")),
            ArrayData::C64(_) => Err(Error::Format("expected a real array, found complex".into())),
        }
    }

    pub fn to_complex(&self) -> Result<ArrayD<C64>> {
        match &self.data {
            ArrayData::C64(v) => Ok(ArrayD::from_shape_vec(
                IxDyn(&self.dims),
                v.iter().map(|z| C64::new(z.re as f64, z.im as f64)).collect(),
            )
            .expect("validated length")),
            ArrayData::F32(_) => Err(Error::Format("expected a complex array, found real".into())),
        }
    }

    pub fn to_real2(&self) -> Result<Array2<f64>> {
        self.to_real()?.into_dimensionality().map_err(|_| Error::Shape(format!("expected rank 2, got {:?}", self.dims)))
    }

    pub fn to_real_stack(&self) -> Result<Vec<Array2<f64>>> {
        let a: Array3<f64> = self
            .to_real()?
            .into_dimensionality()
            .map_err(|_| Error::Shape(format!("expected rank 3, got {:?}", self.dims)))?;
        Ok(a.outer_iter().map(|s| s.to_owned()).collect())
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        Ok(self.to_real()?.into_iter().collect())
    }
}

/// Ordered named arrays with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, NamedArray)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::LengthMismatch(format!("{what}: need {n} bytes at offset {}, file has {}", self.pos, self.buf.len()))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; names must be unique and fit in a `u16` length.
    pub fn insert(&mut self, name: impl Into<String>, array: NamedArray) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format("entry name too long".into()));
        }
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate entry `{name}`")));
        }
        if self.entries.len() == u16::MAX as usize {
            return Err(Error::Format("too many entries".into()));
        }
        self.entries.push((name, array));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    /// Like [`get`](Self::get) but a missing entry is an error.
    pub fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing entry `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NamedArray)> {
        self.entries.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for (name, arr) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(arr.data.dtype());
            out.push(arr.dims.len() as u8);
            for &d in &arr.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &arr.data {
                ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::C64(v) => v.iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch(version));
        }
        let count = r.u16("entry count")?;
        let mut c = Container::new();
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format(format!("entry {i}: name is not UTF-8")))?
                .to_string();
            let dtype = r.u8("dtype")?;
            let size = match dtype {
                0 => 4,
                1 => 8,
                d => return Err(Error::Format(format!("entry `{name}`: unknown dtype {d}"))),
            };
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let bytes = n.and_then(|n| n.checked_mul(size)).filter(|&b| b <= r.remaining()).ok_or_else(|| {
                Error::LengthMismatch(format!("entry `{name}`: payload for dims {dims:?} exceeds the file"))
            })?;
            let raw = r.take(bytes, "payload")?;
            let f = |k: usize| f32::from_le_bytes(raw[4 * k..4 * k + 4].try_into().unwrap());
            let data = if dtype == 0 {
                ArrayData::F32((0..bytes / 4).map(f).collect())
            } else {
                ArrayData::C64((0..bytes / 8).map(|k| Complex32::new(f(2 * k), f(2 * k + 1))).collect())
            };
            c.insert(name, NamedArray { dims, data })?;
        }
        if r.remaining() != 0 {
            return Err(Error::LengthMismatch(format!("{} trailing bytes after the last entry", r.remaining())));
        }
        Ok(c)
    }

    /// Writes to a temporary file beside `path`, then renames it into place.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Writes `bytes` via a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidInput, "not a file path")))?;
    let tmp = path.with_file_name(format!(".{}.{}.tmp", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_container(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    container.write(path)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    Container::read(path)
}
