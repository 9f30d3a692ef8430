//! Checkpoint container, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "CORNVIT\0"
//! version    u32
//! stage      u8       1..=3, 0 when untagged
//! header_len u32
//! header     JSON     config, class order, trainable mask, tensor index, history
//! tensors    f32 data in header order
//! sha256     32 bytes over everything above
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::TrainHistory;
use crate::backbone::{BackboneConfig, BackboneError, StageModel};
use crate::labels::Stage;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CORNVIT\0";
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 1 + 4;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checksum mismatch (file truncated or corrupted)")]
    Checksum,
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is tagged {found:?}, expected {expected}")]
    StageMismatch { expected: Stage, found: Option<Stage> },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: BackboneConfig,
    classes: Vec<String>,
    trainable: Vec<bool>,
    tensors: Vec<TensorEntry>,
    history: Option<TrainHistory>,
}

pub struct Checkpoint {
    pub model: StageModel<f32>,
    pub history: Option<TrainHistory>,
}

pub fn encode_checkpoint(model: &StageModel<f32>, history: Option<&TrainHistory>) -> Vec<u8> {
    let params = model.params();
    let header = Header {
        config: model.config().clone(),
        classes: model.stage().map(|s| s.class_names().map(String::from).to_vec()).unwrap_or_default(),
        trainable: params.trainable_mask().to_vec(),
        tensors: params.iter().map(|(name, t)| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() }).collect(),
        history: history.cloned(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + 4 * params.total_count() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.stage().map_or(0, Stage::number));
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREAMBLE_LEN + DIGEST_LEN {
        return Err(CheckpointError::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    if &body[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let u32_at = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes"));
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let stage = match body[12] {
        0 => None,
        n => Some(Stage::from_number(n).ok_or_else(|| CheckpointError::Format(format!("stage tag {n}")))?),
    };
    let header_len = u32_at(13) as usize;
    let header_end = PREAMBLE_LEN.checked_add(header_len).filter(|&e| e <= body.len());
    let header_end = header_end.ok_or_else(|| CheckpointError::Format("header overruns file".into()))?;
    let header: Header =
        serde_json::from_slice(&body[PREAMBLE_LEN..header_end]).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if let Some(s) = stage {
        if header.classes != s.class_names() {
            return Err(CheckpointError::Format(format!("class order {:?} does not match {s}", header.classes)));
        }
    }

    let mut data = &body[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        if data.len() < 4 * n {
            return Err(CheckpointError::Format(format!("tensor {} runs past the end", entry.name)));
        }
        let (chunk, rest) = data.split_at(4 * n);
        data = rest;
        let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(entry.shape, values).map_err(|e| CheckpointError::Format(e.to_string()))?;
        tensors.push((entry.name, t));
    }
    if !data.is_empty() {
        return Err(CheckpointError::Format(format!("{} trailing bytes", data.len())));
    }
    let mut model = StageModel::from_named_tensors(header.config, stage, tensors)?;
    if header.trainable.len() != model.params().len() {
        return Err(CheckpointError::Format("trainable mask length".into()));
    }
    for (i, flag) in header.trainable.into_iter().enumerate() {
        let name = model.params().names()[i].clone();
        model.params_mut().set_trainable(&name, flag)?;
    }
    Ok(Checkpoint { model, history: header.history })
}

pub fn save_checkpoint(model: &StageModel<f32>, history: Option<&TrainHistory>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, history))
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

/// Loads a checkpoint, requiring its stage tag to equal `expected` when given.
pub fn load_checkpoint(path: &Path, expected: Option<Stage>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    let ckpt = decode_checkpoint(&bytes)?;
    if let Some(expected) = expected {
        if ckpt.model.stage() != Some(expected) {
            return Err(CheckpointError::StageMismatch { expected, found: ckpt.model.stage() });
        }
    }
    Ok(ckpt)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::EpochRecord;

    fn model() -> StageModel<f32> {
        let mut m = StageModel::new(BackboneConfig::tiny(), 3).unwrap().with_stage(Stage::Shape);
        m.freeze_backbone();
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let history = TrainHistory {
            epochs: vec![EpochRecord { epoch: 1, lr: 1e-5, train_loss: 0.69, val_acc: 0.5, val_macro_f1: 0.33 }],
        };
        let back = decode_checkpoint(&encode_checkpoint(&m, Some(&history))).unwrap();
        assert_eq!(back.history, Some(history));
        assert_eq!(back.model.stage(), Some(Stage::Shape));
        assert_eq!(back.model.params().trainable_mask(), m.params().trainable_mask());
        for ((n1, t1), (n2, t2)) in m.params().iter().zip(back.model.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn truncation_fails_checksum() {
        let bytes = encode_checkpoint(&model(), None);
        for cut in [1, 40, bytes.len() - 10] {
            assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - cut]), Err(CheckpointError::Checksum)));
        }
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = encode_checkpoint(&model(), None);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Checksum)));
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = encode_checkpoint(&model(), None);
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let n = bytes.len() - DIGEST_LEN;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert!(matches!(decode_checkpoint(&bytes), Err(CheckpointError::Version { found: 2 })));
    }

    #[test]
    fn stage_tag_is_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s2.ckpt");
        save_checkpoint(&model(), None, &path).unwrap();
        let err = load_checkpoint(&path, Some(Stage::Purity)).err().unwrap();
        assert!(matches!(err, CheckpointError::StageMismatch { expected: Stage::Purity, found: Some(Stage::Shape) }));
        assert!(load_checkpoint(&path, Some(Stage::Shape)).is_ok());
    }
}
