use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::tape::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEADAGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus free-form metadata (training config, noise marginals).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: DenoiserConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    data_bytes: usize,
}

impl Checkpoint {
    /// Layout: magic, `u32` version, `u64` manifest length, JSON manifest,
    /// then little-endian `f32` tensor data. All integers little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: [t.rows, t.cols],
                offset,
            });
            offset += t.len() * 4;
        }
        let manifest = Manifest {
            config: self.params.config().clone(),
            meta: self.meta.clone(),
            tensors,
            data_bytes: offset,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated("header".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 20 {
            return Err(Error::Truncated("header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < mlen {
            return Err(Error::Truncated("manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])
            .map_err(|e| Error::ManifestMismatch(format!("unreadable manifest: {e}")))?;
        let data = &body[mlen..];
        if data.len() < manifest.data_bytes {
            return Err(Error::Truncated(format!(
                "tensor data has {} of {} bytes",
                data.len(),
                manifest.data_bytes
            )));
        }
        let mut named = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let [r, c] = entry.shape;
            let end = entry.offset + r * c * 4;
            if end > manifest.data_bytes {
                return Err(Error::ManifestMismatch(format!("tensor {} overruns the data block", entry.name)));
            }
            let values = data[entry.offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            named.push((entry.name, Tensor::new(r, c, values)));
        }
        let params = DenoiserParams::from_named(manifest.config, named)?;
        Ok(Checkpoint {
            params,
            meta: manifest.meta,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
