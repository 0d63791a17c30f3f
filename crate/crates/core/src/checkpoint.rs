//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `DMSRCKPT`, a little-endian `u32` header
//! length, a UTF-8 JSON header, then every tensor's `f64` values in
//! little-endian order, in header order. The header carries the format
//! version, the backbone config, free-form metadata and the tensor table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"DMSRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: BackboneConfig,
    /// Hash of the training configuration that produced the file.
    pub config_fingerprint: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(config: BackboneConfig, config_fingerprint: String, meta: serde_json::Value) -> Self {
        Self {
            header: Header {
                version: VERSION,
                config,
                config_fingerprint,
                meta,
                tensors: Vec::new(),
            },
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        self.header.tensors.push(TensorEntry { name, shape });
        self.data.push(data);
    }

    /// Appends every tensor of `set`, names prefixed with `prefix.`.
    pub fn push_set(&mut self, prefix: &str, set: &impl ParamSet) {
        let mut items = Vec::new();
        set.visit(&mut |name, shape, v| items.push((format!("{prefix}.{name}"), shape.to_vec(), v.to_vec())));
        for (n, s, v) in items {
            self.push(n, s, v);
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}.");
        self.header.tensors.iter().any(|t| t.name.starts_with(&p))
    }

    /// Overwrites `set` from tensors stored under `prefix`; shapes must match.
    pub fn load_set(&self, prefix: &str, set: &mut impl ParamSet) -> Result<()> {
        let mut shapes = Vec::new();
        set.visit(&mut |name, shape, _| shapes.push((name, shape.to_vec())));
        for (name, shape) in &shapes {
            let full = format!("{prefix}.{name}");
            let entry = self
                .header
                .tensors
                .iter()
                .find(|t| t.name == full)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {full}")))?;
            if &entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {full} has shape {:?}, expected {:?}",
                    entry.shape, shape
                )));
            }
        }
        let mut err = None;
        set.visit_mut(&mut |name, v| {
            let full = format!("{prefix}.{name}");
            match self.get(&full) {
                Some(src) if src.len() == v.len() => v.copy_from_slice(src),
                _ => err = Some(Error::Checkpoint(format!("bad tensor payload {full}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(12 + header.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.data {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                header.version
            )));
        }
        let mut off = 12 + hlen;
        let mut data = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let raw = bytes
                .get(off..off + 8 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor {}", t.name)))?;
            data.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
            off += 8 * n;
        }
        if off != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneParams;

    fn cfg() -> BackboneConfig {
        BackboneConfig {
            d: 4,
            n_items: 6,
            steps: 1,
            seed: 3,
        }
    }

    #[test]
    fn backbone_roundtrip() {
        let p = BackboneParams::init(cfg()).unwrap();
        let mut c = Checkpoint::new(cfg(), "abc".into(), serde_json::json!({"kind": "backbone"}));
        c.push_set("backbone", &p);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        let mut q = BackboneParams::init(BackboneConfig { seed: 99, ..cfg() }).unwrap();
        back.load_set("backbone", &mut q).unwrap();
        assert_eq!(p.embedding, q.embedding);
        assert_eq!(p.gnn, q.gnn);
    }

    #[test]
    fn rejects_bad_magic_version_and_shape() {
        assert!(Checkpoint::from_bytes(b"garbage!garbage!").is_err());
        let p = BackboneParams::init(cfg()).unwrap();
        let mut c = Checkpoint::new(cfg(), String::new(), serde_json::Value::Null);
        c.header.version = 99;
        assert!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).is_err());

        let mut c = Checkpoint::new(cfg(), String::new(), serde_json::Value::Null);
        c.push_set("backbone", &p);
        let mut other = BackboneParams::init(BackboneConfig { d: 5, ..cfg() }).unwrap();
        assert!(matches!(c.load_set("backbone", &mut other), Err(Error::Checkpoint(_))));
    }
}
