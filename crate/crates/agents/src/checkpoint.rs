//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "PULSECKP"
//! version      u32       SCHEMA_VERSION
//! meta_len     u64
//! metadata     meta_len bytes of UTF-8 JSON (hyperparameters, RNG states, counters)
//! n_tensors    u32
//! n_tensors times:
//!   name_len   u16, name (UTF-8)
//!   dtype      u8        0 = f64, 1 = u8, 2 = u64
//!   ndim       u8, then ndim x u64 dimensions
//!   data       product(dims) elements
//! ```
//!
//! Tensors are written in name order. Files are written to a sibling
//! temporary path and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{AgentError, Result};

pub const MAGIC: [u8; 8] = *b"PULSECKP";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { shape, data: TensorData::F64(data) }
    }

    pub fn u8(shape: Vec<usize>, data: Vec<u8>) -> Self {
        Self { shape, data: TensorData::U8(data) }
    }

    pub fn u64(shape: Vec<usize>, data: Vec<u64>) -> Self {
        Self { shape, data: TensorData::U64(data) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

fn truncated() -> AgentError {
    AgentError::Checkpoint("file is truncated".into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let s = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Self { metadata, tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| AgentError::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.get(name)?.data {
            TensorData::F64(v) => Ok(v),
            _ => Err(AgentError::Checkpoint(format!("tensor {name} is not f64"))),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.data {
            TensorData::U8(v) => Ok(v),
            _ => Err(AgentError::Checkpoint(format!("tensor {name} is not u8"))),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.data {
            TensorData::U64(v) => Ok(v),
            _ => Err(AgentError::Checkpoint(format!("tensor {name} is not u64"))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata)?;
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(AgentError::Checkpoint(format!(
                    "tensor {name}: shape {:?} does not match {} elements",
                    t.shape,
                    t.data.len()
                )));
            }
            let name_len = u16::try_from(name.len())
                .map_err(|_| AgentError::Checkpoint(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let dtype = match t.data {
                TensorData::F64(_) => 0u8,
                TensorData::U8(_) => 1,
                TensorData::U64(_) => 2,
            };
            out.push(dtype);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
                TensorData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(8).map_err(|_| AgentError::Checkpoint("not a checkpoint file".into()))? != MAGIC {
            return Err(AgentError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != SCHEMA_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint schema version {version} (expected {SCHEMA_VERSION})"
            )));
        }
        let meta_len = c.u64()? as usize;
        let metadata: Value = serde_json::from_slice(c.take(meta_len)?)?;
        let n = c.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let name_len = c.u16()? as usize;
            let name = String::from_utf8(c.take(name_len)?.to_vec())
                .map_err(|_| AgentError::Checkpoint("tensor name is not UTF-8".into()))?;
            let dtype = c.u8()?;
            let ndim = c.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(c.u64()? as usize);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| AgentError::Checkpoint(format!("tensor {name} is too large")))?;
            let data = match dtype {
                0 => TensorData::F64(
                    c.take(count.checked_mul(8).ok_or_else(truncated)?)?
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ),
                1 => TensorData::U8(c.take(count)?.to_vec()),
                2 => TensorData::U64(
                    c.take(count.checked_mul(8).ok_or_else(truncated)?)?
                        .chunks_exact(8)
                        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect(),
                ),
                d => return Err(AgentError::Checkpoint(format!("tensor {name}: unknown dtype {d}"))),
            };
            tensors.insert(name, Tensor { shape, data });
        }
        if c.pos != buf.len() {
            return Err(AgentError::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Self { metadata, tensors })
    }

    /// Write via a temporary sibling file and an atomic rename.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = temp_path(path);
        {
            let file = fs::File::create(&tmp)?;
            let mut w = BufWriter::new(file);
            w.write_all(&bytes)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}
