//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PGRF" | version: u32 | count: u32 |
//!   count × { name_len: u32 | name: utf8 | dtype: u8 | ndim: u32 | dims: ndim × u64 | data }
//! ```
//!
//! `dtype` is 0 for `f32`, 1 for `f64`, 2 for `i64`. Entry order is preserved,
//! so decode → encode reproduces the input bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PGRF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum EntryData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl EntryData {
    fn len(&self) -> usize {
        match self {
            EntryData::F32(v) => v.len(),
            EntryData::F64(v) => v.len(),
            EntryData::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            EntryData::F32(_) => 0,
            EntryData::F64(_) => 1,
            EntryData::I64(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub shape: Vec<usize>,
    pub data: EntryData,
}

impl Entry {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: EntryData::F64(t.data().to_vec()),
        }
    }

    /// Converts any numeric entry into an `f64` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = match &self.data {
            EntryData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            EntryData::F64(v) => v.clone(),
            EntryData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Tensor::new(self.shape.clone(), data).expect("entry shape validated on construction")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_store(store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(_, p)| (p.name.clone(), Entry::from_tensor(&p.value)))
            .collect();
        Self { entries }
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: Entry) -> Result<()> {
        let n: usize = entry.shape.iter().product();
        if n != entry.data.len() {
            return Err(Error::dim("entry shape does not match its data length"));
        }
        self.entries.insert(name.into(), entry);
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.insert(name.into(), Entry::from_tensor(t));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    /// Loads every parameter of `store` from the entries of the same name.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        let tensors: Vec<(String, Tensor)> = store
            .iter()
            .map(|(_, p)| {
                self.entries
                    .get(&p.name)
                    .map(|e| (p.name.clone(), e.to_tensor()))
                    .ok_or_else(|| Error::format(format!("checkpoint lacks parameter {}", p.name)))
            })
            .collect::<Result<_>>()?;
        store.load_values(tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, entry) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[entry.data.dtype()])?;
            w.write_all(&(entry.shape.len() as u32).to_le_bytes())?;
            for &d in &entry.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &entry.data {
                EntryData::F32(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                EntryData::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                EntryData::I64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("bad magic, not a PGRF container"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported container version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut entries = IndexMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::format("entry name is not utf-8"))?;
            let mut dtype = [0u8; 1];
            read_exact(&mut r, &mut dtype)?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype[0] {
                0 => EntryData::F32(read_values(&mut r, n, f32::from_le_bytes)?),
                1 => EntryData::F64(read_values(&mut r, n, f64::from_le_bytes)?),
                2 => EntryData::I64(read_values(&mut r, n, i64::from_le_bytes)?),
                d => return Err(Error::format(format!("unknown dtype tag {d}"))),
            };
            if entries.insert(name.clone(), Entry { shape, data }).is_some() {
                return Err(Error::format(format!("duplicate entry {name}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated container"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_values<R: Read, T, const N: usize>(r: &mut R, n: usize, decode: fn([u8; N]) -> T) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; N];
    for _ in 0..n {
        read_exact(r, &mut b)?;
        out.push(decode(b));
    }
    Ok(out)
}
