//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic `GNFRCKPT`, `u32` format version, `u64` header
//! length, a JSON header, then every tensor's values as little-endian
//! `f64` in header order. Values are stored as raw bits, so a load
//! reproduces the saved state exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::autograd::{Array, ParamSet};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GNFRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct SetEntry {
    name: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: serde_json::Value,
    sets: Vec<SetEntry>,
}

/// Named parameter sets plus free-form metadata (architectures, seen
/// classes, tap point, ADA probability, RNG state).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub sets: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, sets: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, set: ParamSet) {
        self.sets.push((name.into(), set));
    }

    pub fn set(&self, name: &str) -> Result<&ParamSet> {
        self.sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("checkpoint has no parameter set `{name}`")))
    }

    pub fn has_set(&self, name: &str) -> bool {
        self.sets.iter().any(|(n, _)| n == name)
    }

    /// Deserializes one metadata field.
    pub fn meta_field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("checkpoint field `{key}`: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            sets: self
                .sets
                .iter()
                .map(|(name, set)| SetEntry {
                    name: name.clone(),
                    tensors: set
                        .iter()
                        .map(|p| TensorEntry {
                            name: p.name.clone(),
                            shape: p.value.shape().to_vec(),
                            trainable: p.trainable,
                        })
                        .collect(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + json.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, set) in &self.sets {
            for p in set.iter() {
                for v in p.value.iter() {
                    out.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20usize.saturating_add(hlen))
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut data = &bytes[20 + hlen..];
        let mut sets = Vec::with_capacity(header.sets.len());
        for entry in header.sets {
            let mut set = ParamSet::new();
            for t in entry.tensors {
                let n: usize = t.shape.iter().product();
                if data.len() < n * 8 {
                    return Err(Error::Format(format!("truncated tensor `{}`", t.name)));
                }
                let values: Vec<f64> = data[..n * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect();
                data = &data[n * 8..];
                let arr = Array::from_shape_vec(IxDyn(&t.shape), values).map_err(|e| Error::Format(e.to_string()))?;
                let i = set.add(t.name, arr);
                set.get_mut(i).trainable = t.trainable;
            }
            sets.push((entry.name, set));
        }
        if !data.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint data", data.len())));
        }
        Ok(Self {
            meta: header.meta,
            sets,
        })
    }

    /// Writes atomically via a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
