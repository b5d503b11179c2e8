//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "SEGNETCK" | version | config_len | config utf-8
//! | n_params | { name_len | name | ndim | dims.. | f32 values.. }*
//! | n_attachments | { name_len | name | byte_len | bytes }*
//! ```
//!
//! Attachments carry non-array payloads such as the vocabulary word list.

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SEGNETCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: String,
    pub params: Vec<StoredParam>,
    pub attachments: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn from_params(config: String, params: &ParamStore) -> Self {
        let params = params
            .iter()
            .map(|(_, p)| StoredParam {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint {
            version: VERSION,
            config,
            params,
            attachments: Vec::new(),
        }
    }

    pub fn attach(&mut self, name: &str, bytes: Vec<u8>) {
        self.attachments.push((name.to_string(), bytes));
    }

    pub fn attachment(&self, name: &str) -> Option<&[u8]> {
        self.attachments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Overwrites matching parameters in `store`; every store entry must be present.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let stored = self
                .params
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            let target = store.value_mut(id);
            if stored.shape != target.shape() {
                return Err(Error::shape("checkpoint restore", target.shape(), &stored.shape));
            }
            let data: Vec<f64> = stored.values.iter().map(|&v| v as f64).collect();
            *target = Tensor::new(stored.shape.clone(), data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.version);
        put_str(&mut out, &self.config);
        put_u32(&mut out, self.params.len() as u32);
        for p in &self.params {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.shape.len() as u32);
            for &d in &p.shape {
                put_u32(&mut out, d as u32);
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        put_u32(&mut out, self.attachments.len() as u32);
        for (name, bytes) in &self.attachments {
            put_str(&mut out, name);
            put_u32(&mut out, bytes.len() as u32);
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config = r.string()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(StoredParam { name, shape, values });
        }
        let na = r.u32()? as usize;
        let mut attachments = Vec::with_capacity(na);
        for _ in 0..na {
            let name = r.string()?;
            let len = r.u32()? as usize;
            attachments.push((name, r.take(len)?.to_vec()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            version,
            config,
            params,
            attachments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("invalid utf-8: {e}")))
    }
}
