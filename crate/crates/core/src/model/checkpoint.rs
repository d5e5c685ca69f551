//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CORDELCK" | u32 format version | u64 header length | JSON header
//!   | f64 tensor data in header order | sha256 of everything before
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{next_generation, Model, ModelConfig, Variant};
use crate::embeddings::EmbeddingSource;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CORDELCK";
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epoch (1-based) the weights were taken from.
    pub epoch: Option<usize>,
    pub validation_f1: Option<f64>,
    pub train_seed: Option<u64>,
    /// Decision threshold to use at inference.
    pub threshold: f64,
    pub schema: Vec<String>,
    pub embeddings: Option<EmbeddingSource>,
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(model: &Model, metadata: &CheckpointMeta) -> Result<Vec<u8>> {
        let header = Header {
            config: model.config.clone(),
            metadata: metadata.clone(),
            tensors: model
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::CorruptCheckpoint(format!("header serialization: {e}")))?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN + json.len() + 8 * model.num_parameters() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in model.params.iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::CorruptCheckpoint(msg.to_string());
        if bytes.len() < PREAMBLE_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < PREAMBLE_LEN + DIGEST_LEN {
            return Err(corrupt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| PREAMBLE_LEN.checked_add(n))
            .filter(|&end| end <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&body[PREAMBLE_LEN..header_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;

        let mut model = Model::new(header.config)?;
        if header.tensors.len() != model.params.len() {
            return Err(corrupt("tensor list does not match the model configuration"));
        }
        let data = &body[header_end..];
        if data.len() != 8 * model.num_parameters() {
            return Err(corrupt("tensor data has the wrong length"));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for (entry, param) in header.tensors.iter().zip(model.params.iter_mut()) {
            if entry.name != param.name || entry.shape != param.shape {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name, entry.shape, param.name, param.shape
                )));
            }
            for slot in param.data.iter_mut() {
                *slot = values.next().expect("length checked");
            }
        }
        model.generation = next_generation();
        Ok(Checkpoint {
            model,
            metadata: header.metadata,
        })
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, metadata: &CheckpointMeta) -> Result<()> {
    let bytes = Checkpoint::to_bytes(model, metadata)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and rejects it unless it holds `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: Variant) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.variant() != expected {
        return Err(Error::VariantMismatch {
            expected: expected.to_string(),
            found: ckpt.model.variant().to_string(),
        });
    }
    Ok(ckpt)
}
