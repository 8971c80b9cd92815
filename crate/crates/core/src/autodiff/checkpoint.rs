//! Binary checkpoint format.
//!
//! ```text
//! magic        b"SMOG1"
//! header_len   u64 LE, followed by header_len bytes of UTF-8 "key=value\n" lines
//! records      until end of file, each:
//!   name_len   u64 LE
//!   name       name_len bytes UTF-8
//!   rank       u64 LE
//!   dims       rank × u64 LE
//!   values     product(dims) × f32 LE
//! ```
//!
//! The loader rejects truncated records and trailing bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::{Param, ParamStore};
use super::real::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SMOG1";

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<Param<f32>>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(header: BTreeMap<String, String>, store: &ParamStore<T>) -> Self {
        let cast = store.cast::<f32>();
        Checkpoint {
            header,
            tensors: cast.iter().map(|(_, p)| p.clone()).collect(),
        }
    }

    pub fn push_tensor<T: Real>(&mut self, name: impl Into<String>, shape: &[usize], values: &[T]) {
        self.tensors.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            values: values.iter().map(|v| v.as_f64() as f32).collect(),
        });
    }

    pub fn tensor(&self, name: &str) -> Option<&Param<f32>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let mut text = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!(
                    "header entry {k:?} is not representable"
                )));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.values.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has inconsistent shape",
                    t.name
                )));
            }
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u64).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let hlen = r.u64_len()?;
        let text = std::str::from_utf8(r.take(hlen)?)
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let mut header = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let nlen = r.u64_len()?;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u64_len()?;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u64_len()?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
            let raw = r.take(
                count
                    .checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
            )?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Param {
                name,
                shape,
                values,
            });
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64_len(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v)
            .map_err(|_| Error::Checkpoint(format!("length {v} does not fit in memory")))
    }
}
