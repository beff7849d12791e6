//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` metadata length, UTF-8
//! JSON metadata, then every network's parameters as little-endian `f64` in
//! metadata order. Floats are written bit-for-bit so loading is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamVector, TensorSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HMCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkMeta {
    name: String,
    init_seed: u64,
    len: usize,
    tensors: Vec<TensorSpec>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    kind: String,
    fingerprint: String,
    config: serde_json::Value,
    networks: Vec<NetworkMeta>,
}

/// Named parameter sets plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub fingerprint: String,
    pub config: serde_json::Value,
    networks: Vec<(String, ParamVector)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, fingerprint: impl Into<String>, config: serde_json::Value) -> Self {
        Self { kind: kind.into(), fingerprint: fingerprint.into(), config, networks: Vec::new() }
    }

    /// Adds or replaces a network.
    pub fn insert(&mut self, name: impl Into<String>, params: ParamVector) {
        let name = name.into();
        match self.networks.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = params,
            None => self.networks.push((name, params)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamVector> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn require(&self, name: &str) -> Result<&ParamVector> {
        self.get(name).ok_or_else(|| Error::format("checkpoint", format!("no network named `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.networks.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            kind: self.kind.clone(),
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            networks: self
                .networks
                .iter()
                .map(|(name, p)| NetworkMeta {
                    name: name.clone(),
                    init_seed: p.init_seed(),
                    len: p.len(),
                    tensors: p.specs().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&meta)?;
        let total: usize = self.networks.iter().map(|(_, p)| p.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in &self.networks {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::format("checkpoint", msg.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < meta_len {
            return Err(bad("truncated metadata"));
        }
        let meta: Meta = serde_json::from_slice(&body[..meta_len])?;
        let mut data = &body[meta_len..];
        let mut networks = Vec::with_capacity(meta.networks.len());
        for net in meta.networks {
            if data.len() < 8 * net.len {
                return Err(bad(&format!("truncated parameters for `{}`", net.name)));
            }
            let (head, rest) = data.split_at(8 * net.len);
            let values = head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            networks.push((net.name, ParamVector::from_parts(net.tensors, values, net.init_seed)?));
            data = rest;
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind: meta.kind, fingerprint: meta.fingerprint, config: meta.config, networks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
