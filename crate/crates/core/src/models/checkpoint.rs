//! Binary checkpoint: `ADPD` magic, u32 version, u64 manifest length, JSON
//! manifest, then little-endian f32 payloads in manifest order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::autodiff::{GroupName, ParameterGroup, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"ADPD";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint or unsupported version (magic {magic:?}, version {version})")]
    VersionMismatch { magic: [u8; 4], version: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint lacks parameter group {0}")]
    MissingGroup(String),
    #[error("checksum mismatch for {0}")]
    Checksum(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    meta: TrainingMeta,
    groups: Vec<GroupRecord>,
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    name: String,
    tensors: Vec<TensorRecord>,
    norm_stats: Vec<TensorRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    sha256: String,
}

fn payload(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Tensor checksum as stored in the manifest.
pub fn tensor_checksum(t: &Tensor<f32>) -> String {
    digest_hex(&payload(t))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let mut groups = Vec::new();
        for g in self.model.groups() {
            let mut rec = |m: &crate::autodiff::NamedTensors<f32>| -> Vec<TensorRecord> {
                m.iter()
                    .map(|(k, t)| {
                        let bytes = payload(t);
                        let r = TensorRecord {
                            name: k.clone(),
                            shape: t.shape().to_vec(),
                            sha256: digest_hex(&bytes),
                        };
                        body.extend_from_slice(&bytes);
                        r
                    })
                    .collect()
            };
            let tensors = rec(&g.tensors);
            let norm_stats = rec(&g.norm_stats);
            groups.push(GroupRecord {
                name: g.name.as_str().to_string(),
                tensors,
                norm_stats,
            });
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            meta: self.meta.clone(),
            groups,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Corrupt(format!("{} byte file", bytes.len())));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if &magic != MAGIC || version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch { magic, version });
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| l.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("manifest length {len}")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
            .map_err(|e| CheckpointError::Corrupt(format!("manifest: {e}")))?;
        if manifest.version != version {
            return Err(CheckpointError::Corrupt("manifest version differs from header".into()));
        }
        let mut cursor = end;
        let mut groups = Vec::new();
        for name in GroupName::ALL {
            let rec = manifest
                .groups
                .iter()
                .find(|g| g.name == name.as_str())
                .ok_or_else(|| CheckpointError::MissingGroup(name.as_str().into()))?;
            let mut group = ParameterGroup::new(name);
            for (records, into_stats) in [(&rec.tensors, false), (&rec.norm_stats, true)] {
                for r in records {
                    let n: usize = r.shape.iter().product();
                    let stop = cursor
                        .checked_add(4 * n)
                        .filter(|&s| s <= bytes.len())
                        .ok_or_else(|| CheckpointError::Corrupt(format!("payload of {} truncated", r.name)))?;
                    let raw = &bytes[cursor..stop];
                    if digest_hex(raw) != r.sha256 {
                        return Err(CheckpointError::Checksum(format!("{name}.{}", r.name)));
                    }
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    let t = Tensor::from_vec(&r.shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
                    cursor = stop;
                    if into_stats {
                        group.norm_stats.insert(r.name.clone(), t);
                    } else {
                        group.tensors.insert(r.name.clone(), t);
                    }
                }
            }
            groups.push(group);
        }
        if manifest.groups.len() != 4 {
            return Err(CheckpointError::Corrupt(format!("{} groups", manifest.groups.len())));
        }
        if cursor != bytes.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - cursor)));
        }
        manifest.config.validate().map_err(CheckpointError::Corrupt)?;
        let model = Model::from_groups(manifest.config, groups).map_err(CheckpointError::Corrupt)?;
        Ok(Self {
            model,
            meta: manifest.meta,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
