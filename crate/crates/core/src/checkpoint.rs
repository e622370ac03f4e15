//! Versioned flat-binary container of named float64 arrays.
//!
//! Layout: magic `OFNA`, format version, manifest length, manifest JSON
//! (names, shapes, model kind, free-form metadata), then the raw
//! little-endian f64 buffers concatenated in manifest order. All model
//! checkpoints (predictor, flows, mixture posterior) share this container.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"OFNA";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt manifest: {0}")]
    Manifest(String),
    #[error("array `{0}` missing from checkpoint")]
    MissingArray(String),
    #[error("metadata key `{0}` missing or of wrong type")]
    MissingMeta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    kind: String,
    arrays: Vec<ArrayEntry>,
    meta: Value,
}

/// In-memory checkpoint: ordered named arrays plus JSON metadata.
#[derive(Debug)]
pub struct Checkpoint {
    pub kind: String,
    arrays: Vec<(String, Tensor)>,
    pub meta: Value,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Checkpoint {
            kind: kind.into(),
            arrays: Vec::new(),
            meta: Value::Object(Default::default()),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<Value>) {
        self.meta
            .as_object_mut()
            .expect("meta is always an object")
            .insert(key.to_string(), value.into());
    }

    pub fn array(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.arrays.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64, CheckpointError> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64, CheckpointError> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn meta_usize_list(&self, key: &str) -> Result<Vec<usize>, CheckpointError> {
        self.meta
            .get(key)
            .and_then(|v| v.as_array())
            .and_then(|a| {
                a.iter()
                    .map(|v| v.as_u64().map(|u| u as usize))
                    .collect::<Option<Vec<_>>>()
            })
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            version: VERSION,
            kind: self.kind.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let mjson = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&mjson);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = std::io::Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        cur.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let mut u64buf = [0u8; 8];
        cur.read_exact(&mut u64buf)?;
        let mlen = u64::from_le_bytes(u64buf) as usize;
        let mut mjson = vec![0u8; mlen];
        cur.read_exact(&mut mjson)?;
        let manifest: Manifest =
            serde_json::from_slice(&mjson).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for entry in manifest.arrays {
            let n: usize = entry.shape.iter().product();
            let mut data = vec![0.0f64; n];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                cur.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            arrays.push((entry.name, Tensor::new(entry.shape, data)));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            arrays,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of a file, used to tie feature files to the model that
/// produced them.
pub fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
