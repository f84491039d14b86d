//! Checkpoint files.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "CLKHCKPT"
//! 8       4     format version, u32 little-endian (1)
//! 12      8     header length H, u64 little-endian
//! 20      H     header, UTF-8 JSON (see `Header`)
//! 20+H    ...   tensor payloads in header order, f64 little-endian
//! ```

use std::fs;
use std::path::Path;

use clickhere_core::model::{Model, ModelConfig, ModelError, Parameters};
use clickhere_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CLKHCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload.
    pub offset: u64,
    /// SHA-256 of this tensor's payload bytes.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config: ModelConfig,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_sha256: String,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
}

pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Serializes a model; identical models give identical bytes.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.iter() {
        let start = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: start as u64,
            sha256: hex::encode(Sha256::digest(&payload[start..])),
        });
    }
    let header = Header {
        config: model.config.clone(),
        config_sha256: config_hash(&model.config),
        tensors,
        payload_bytes: payload.len() as u64,
    };
    let h = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + h.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Corrupt(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let hend = 20usize
        .checked_add(usize::try_from(hlen).map_err(|_| corrupt("header length overflows"))?)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header runs past end of file"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..hend]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    if config_hash(&header.config) != header.config_sha256 {
        return Err(CheckpointError::ConfigMismatch("config does not match its recorded hash".into()));
    }
    let payload = &bytes[hend..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(CheckpointError::Corrupt(format!(
            "payload is {} bytes, header says {}",
            payload.len(),
            header.payload_bytes
        )));
    }
    let mut params = Parameters::new();
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| corrupt("offset overflows"))?;
        let end = n
            .checked_mul(8)
            .and_then(|b| start.checked_add(b))
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor `{}` runs past the payload", e.name)))?;
        let raw = &payload[start..end];
        if hex::encode(Sha256::digest(raw)) != e.sha256 {
            return Err(CheckpointError::Corrupt(format!("tensor `{}` fails its checksum", e.name)));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| CheckpointError::Corrupt(err.to_string()))?;
        if params.insert(e.name.clone(), t).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor `{}`", e.name)));
        }
    }
    Ok(Model::from_parts(header.config, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| CheckpointError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Rejects a loaded model whose config differs from `expected`.
pub fn expect_config(model: &Model, expected: &ModelConfig) -> Result<(), CheckpointError> {
    if &model.config == expected {
        Ok(())
    } else {
        Err(CheckpointError::ConfigMismatch(format!(
            "checkpoint config hash {} differs from expected {}",
            config_hash(&model.config),
            config_hash(expected)
        )))
    }
}
