//! The `.stfeat` feature file: little-endian, magic "STFT", u32 version,
//! u32 frame count, u32 feature dimension, then the frames as 32-bit
//! reals, row-major.

use std::fs;
use std::path::Path;

use stforge_core::corpus::FEAT_DIM;
use stforge_core::Tensor;

use crate::error::{io_err, CliError, Result};

const MAGIC: &[u8; 4] = b"STFT";
const VERSION: u32 = 1;

pub fn write_features(path: &Path, frames: &Tensor<f32>) -> Result<()> {
    let shape = frames.shape();
    if shape.len() != 2 || shape[1] != FEAT_DIM || shape[0] == 0 {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            msg: format!("feature matrix must be n x {FEAT_DIM} with n >= 1, got {shape:?}"),
        });
    }
    let mut bytes = Vec::with_capacity(16 + frames.numel() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(shape[0] as u32).to_le_bytes());
    bytes.extend_from_slice(&(shape[1] as u32).to_le_bytes());
    for v in frames.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let fail = |msg: String| CliError::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 16 {
        return Err(fail(format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let n_frames = word(8) as usize;
    let feat_dim = word(12) as usize;
    if feat_dim != FEAT_DIM {
        return Err(fail(format!(
            "feature dimension {feat_dim}, expected {FEAT_DIM}"
        )));
    }
    if n_frames == 0 {
        return Err(fail("zero frames".into()));
    }
    let expected = 16 + n_frames * feat_dim * 4;
    if bytes.len() != expected {
        return Err(fail(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::new(vec![n_frames, feat_dim], data).expect("sizes checked above"))
}
