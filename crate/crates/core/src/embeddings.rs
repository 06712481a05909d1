//! Embedding tables and the EMB1 file format.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "EMB1"            4 bytes
//! version = 1       u32
//! dim               u32
//! count             u64
//! count × { id_len: u32, id: id_len UTF-8 bytes, dim × f32 }
//! ```
//!
//! Entries are written in sorted-id order, so output is byte-deterministic.
//! Values are stored as `f32` and widened to `f64` in memory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Embedding(format!("invalid dimension {dim}")));
        }
        Ok(EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Embedding(format!(
                "vector for {id:?} has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(x) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Embedding(format!("non-finite value {x} for {id:?}")));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Embedding(format!("duplicate id {id:?}")));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<&[f64]> {
        self.entries
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (4 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, v) in &self.entries {
            let len = u32::try_from(id.len())
                .map_err(|_| Error::Embedding(format!("id too long: {} bytes", id.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &x in v {
                let f = x as f32;
                if !f.is_finite() {
                    return Err(Error::Embedding(format!(
                        "value {x} for {id:?} does not fit in f32"
                    )));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Embedding("bad magic (expected EMB1)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Embedding(format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut table = EmbeddingTable::new(dim)?;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Embedding(format!("id at byte {} is not UTF-8", r.pos - len)))?
                .to_string();
            let raw = r.take(dim * 4)?;
            let v = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            table.insert(id, v)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Embedding(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - r.pos
            )));
        }
        Ok(table)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Embedding(format!(
                "truncated file: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, table.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
        .map_err(|e| Error::Embedding(format!("{}: {e}", path.display())))
}

/// `v1` followed by `v2`.
pub fn concat(v1: &[f64], v2: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v1.len() + v2.len());
    out.extend_from_slice(v1);
    out.extend_from_slice(v2);
    out
}
