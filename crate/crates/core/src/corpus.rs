//! Corpus instances and batch assembly.
//!
//! Feature storage is always 32-bit. Batches carry padded blocks plus
//! per-instance lengths and masks; the model slices back to exact lengths,
//! so padding never changes a result, only memory layout.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::vocab::{CharVocab, PAD};

/// Width of every feature frame.
pub const FEAT_DIM: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub utt_id: String,
    /// `n x 40`, one row per frame.
    pub frames: Tensor<f32>,
}

impl FeatureSequence {
    pub fn new(utt_id: String, frames: Tensor<f32>) -> Result<Self> {
        if !frames.is_matrix() || frames.cols() != FEAT_DIM {
            return Err(Error::BadArgument {
                op: "features",
                msg: alloc::format!(
                    "frames must be n x {FEAT_DIM}, got shape {:?}",
                    frames.shape()
                ),
            });
        }
        Ok(FeatureSequence { utt_id, frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusInstance {
    pub utt_id: String,
    pub features: FeatureSequence,
    pub transcription: String,
    pub translation: String,
}

impl CorpusInstance {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }
}

/// A group of instances padded to common extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub utt_ids: Vec<String>,
    /// `B x n_max x 40` feature block, row-major, zero padded.
    pub features: Vec<f32>,
    pub n_max: usize,
    pub feat_lens: Vec<usize>,
    /// `B x t_max` target ids (BOS .. EOS), PAD padded.
    pub targets: Vec<u32>,
    pub t_max: usize,
    pub target_lens: Vec<usize>,
    /// `B x n_max`, true on real frames.
    pub feat_mask: Vec<bool>,
    /// `B x t_max`, true on real target positions.
    pub target_mask: Vec<bool>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.utt_ids.len()
    }

    /// Instance `i`'s features at their exact length, `n_i x 40`.
    pub fn feature_matrix(&self, i: usize) -> Tensor<f32> {
        let n = self.feat_lens[i];
        let start = i * self.n_max * FEAT_DIM;
        let data = self.features[start..start + n * FEAT_DIM].to_vec();
        Tensor::new(vec![n, FEAT_DIM], data).expect("lengths within padded block")
    }

    /// Instance `i`'s target ids at their exact length.
    pub fn target_ids(&self, i: usize) -> &[u32] {
        let t = self.target_lens[i];
        &self.targets[i * self.t_max..i * self.t_max + t]
    }
}

fn build_batch(group: &[&CorpusInstance], vocab: &CharVocab) -> Batch {
    let b = group.len();
    let encoded: Vec<Vec<u32>> = group
        .iter()
        .map(|inst| vocab.encode(&inst.translation))
        .collect();
    let n_max = group.iter().map(|inst| inst.n_frames()).max().unwrap();
    let t_max = encoded.iter().map(Vec::len).max().unwrap();
    let mut features = vec![0.0f32; b * n_max * FEAT_DIM];
    let mut targets = vec![PAD; b * t_max];
    let mut feat_mask = vec![false; b * n_max];
    let mut target_mask = vec![false; b * t_max];
    let mut feat_lens = Vec::with_capacity(b);
    let mut target_lens = Vec::with_capacity(b);
    for (i, inst) in group.iter().enumerate() {
        let n = inst.n_frames();
        feat_lens.push(n);
        let src = inst.features.frames.data();
        features[i * n_max * FEAT_DIM..i * n_max * FEAT_DIM + n * FEAT_DIM].copy_from_slice(src);
        for m in feat_mask.iter_mut().skip(i * n_max).take(n) {
            *m = true;
        }
        let ids = &encoded[i];
        target_lens.push(ids.len());
        targets[i * t_max..i * t_max + ids.len()].copy_from_slice(ids);
        for m in target_mask.iter_mut().skip(i * t_max).take(ids.len()) {
            *m = true;
        }
    }
    Batch {
        utt_ids: group.iter().map(|inst| inst.utt_id.clone()).collect(),
        features,
        n_max,
        feat_lens,
        targets,
        t_max,
        target_lens,
        feat_mask,
        target_mask,
    }
}

/// Sort instances by frame count, cut into groups of at most `max_batch`,
/// then shuffle the group order. Sorting keeps batch padding small; the
/// shuffle keeps epochs from always walking short-to-long.
pub fn make_batches(
    corpus: &[CorpusInstance],
    vocab: &CharVocab,
    max_batch: usize,
    rng: &mut RngStream,
) -> Result<Vec<Batch>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_batch == 0 {
        return Err(Error::BadArgument {
            op: "make_batches",
            msg: String::from("max_batch must be at least 1"),
        });
    }
    let mut order: Vec<&CorpusInstance> = corpus.iter().collect();
    order.sort_by_key(|inst| inst.n_frames());
    let mut batches: Vec<Batch> = order
        .chunks(max_batch)
        .map(|group| build_batch(group, vocab))
        .collect();
    rng.shuffle(&mut batches);
    Ok(batches)
}

#[cfg(test)]
pub(crate) fn toy_instance(utt_id: &str, n_frames: usize, translation: &str) -> CorpusInstance {
    use alloc::string::ToString;
    let data: Vec<f32> = (0..n_frames * FEAT_DIM)
        .map(|i| (i % 7) as f32 * 0.1)
        .collect();
    let frames = Tensor::new(vec![n_frames, FEAT_DIM], data).unwrap();
    CorpusInstance {
        utt_id: utt_id.to_string(),
        features: FeatureSequence::new(utt_id.to_string(), frames).unwrap(),
        transcription: translation.to_string(),
        translation: translation.to_string(),
    }
}
