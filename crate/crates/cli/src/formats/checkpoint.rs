//! The `.stck` checkpoint codec: little-endian, magic "STCK", u32 version,
//! u32 header length, a JSON header (model config, vocab fingerprint,
//! metadata, parameter directory with name/shape/offset), then the raw
//! 32-bit parameter payloads in directory order.
//!
//! The header is serialized with a fixed field order and offsets are
//! implied by the directory itself, so save -> load -> save reproduces a
//! file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stforge_core::model::ModelConfig;
use stforge_core::train::Checkpoint;
use stforge_core::Tensor;

use crate::error::{io_err, CliError, Result};

const MAGIC: &[u8; 4] = b"STCK";
const VERSION: u32 = 1;

/// Which checkpoints an averaged checkpoint was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgMembers {
    pub epochs: Vec<usize>,
    pub bleus: Vec<f64>,
}

/// A checkpoint as stored on disk: the model state plus averaging
/// provenance when there is any.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub checkpoint: Checkpoint,
    pub averaged_from: Option<AvgMembers>,
}

impl CheckpointFile {
    pub fn plain(checkpoint: Checkpoint) -> Self {
        CheckpointFile {
            checkpoint,
            averaged_from: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    epoch: usize,
    val_loss: f64,
    val_bleu: Option<f64>,
    averaged_from: Option<AvgMembers>,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_fingerprint: String,
    metadata: Metadata,
    params: Vec<DirEntry>,
}

pub fn save_checkpoint(path: &Path, file: &CheckpointFile) -> Result<()> {
    let ck = &file.checkpoint;
    let mut dir = Vec::with_capacity(ck.params.len());
    let mut offset = 0u64;
    for (name, tensor) in &ck.params {
        dir.push(DirEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
        });
        offset += (tensor.numel() * 4) as u64;
    }
    let header = Header {
        config: ck.config.clone(),
        vocab_fingerprint: ck.vocab_fingerprint.clone(),
        metadata: Metadata {
            epoch: ck.epoch,
            val_loss: ck.val_loss,
            val_bleu: ck.val_bleu,
            averaged_from: file.averaged_from.clone(),
        },
        params: dir,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(12 + header_bytes.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for (_, tensor) in &ck.params {
        for v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let fail = |msg: String| CliError::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 12 {
        return Err(fail(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(fail(format!(
            "header length {header_len} overruns the file"
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[12..payload_start])
        .map_err(|e| fail(format!("bad header: {e}")))?;

    let payload = &bytes[payload_start..];
    let mut params = Vec::with_capacity(header.params.len());
    let mut expected_offset = 0u64;
    let mut seen = std::collections::BTreeSet::new();
    for entry in &header.params {
        if !seen.insert(entry.name.as_str()) {
            return Err(fail(format!("parameter '{}' appears twice", entry.name)));
        }
        if entry.offset != expected_offset {
            return Err(fail(format!(
                "parameter '{}' at offset {}, expected {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let span = numel * 4;
        let start = entry.offset as usize;
        if start + span > payload.len() {
            return Err(fail(format!(
                "parameter '{}' shape {:?} overruns the payload",
                entry.name, entry.shape
            )));
        }
        let data: Vec<f32> = payload[start..start + span]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| fail(format!("parameter '{}': {e}", entry.name)))?;
        params.push((entry.name.clone(), tensor));
        expected_offset += span as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(fail(format!(
            "payload is {} bytes, directory implies {expected_offset}",
            payload.len()
        )));
    }
    Ok(CheckpointFile {
        checkpoint: Checkpoint {
            config: header.config,
            vocab_fingerprint: header.vocab_fingerprint,
            epoch: header.metadata.epoch,
            val_loss: header.metadata.val_loss,
            val_bleu: header.metadata.val_bleu,
            params,
        },
        averaged_from: header.metadata.averaged_from,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stforge_core::model::init_params;
    use stforge_core::vocab::CharVocab;

    fn toy() -> CheckpointFile {
        let cfg = ModelConfig {
            feat_dim: 40,
            conv_channels: 2,
            dense1: 6,
            dense2: 5,
            enc_hidden: 3,
            enc_layers: 1,
            char_emb_dim: 4,
            dec_hidden: 5,
            deep_output_dim: 4,
            ..ModelConfig::default()
        };
        let vocab = CharVocab::build(["abc"]).unwrap();
        let params = init_params::<f32>(&cfg, vocab.size(), 9).unwrap();
        let mut ck = Checkpoint::from_params(&params, &cfg, &vocab.fingerprint(), 4, 1.25);
        ck.val_bleu = Some(31.5);
        CheckpointFile::plain(ck)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.stck");
        let b = dir.path().join("b.stck");
        let file = toy();
        save_checkpoint(&a, &file).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded, file);
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn averaging_provenance_survives_the_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avg.stck");
        let mut file = toy();
        file.averaged_from = Some(AvgMembers {
            epochs: vec![7, 8, 9],
            bleus: vec![10.0, 9.9, 9.8],
        });
        save_checkpoint(&path, &file).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), file);
    }

    #[test]
    fn tampered_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.stck");
        save_checkpoint(&path, &toy()).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + header_len].to_vec()).unwrap();
        let grown = header.replacen("\"shape\":[", "\"shape\":[999,", 1);
        let mut out = bytes[0..8].to_vec();
        out.extend_from_slice(&(grown.len() as u32).to_le_bytes());
        out.extend_from_slice(grown.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        fs::write(&path, out).unwrap();
        let err = load_checkpoint(&path).unwrap_err().to_string();
        assert!(err.contains("999"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.stck");
        save_checkpoint(&path, &toy()).unwrap();
        let good = fs::read(&path).unwrap();

        let mut magic = good.clone();
        magic[0] = b'x';
        fs::write(&path, &magic).unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        fs::write(&path, &good[..good.len() - 4]).unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("overruns the payload"));

        let mut extended = good.clone();
        extended.extend_from_slice(&[0; 4]);
        fs::write(&path, &extended).unwrap();
        assert!(load_checkpoint(&path)
            .unwrap_err()
            .to_string()
            .contains("directory implies"));
    }
}
