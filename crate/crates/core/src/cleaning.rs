//! Corpus cleaning: the alignment filter and the frames/characters ratio
//! filter, run in cascade, plus the seeded development split.
//!
//! Every removal is recorded with a reason code so the emitted reports can
//! be audited; `input = kept + removed` holds for each stage.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const REASON_UNALIGNED: &str = "unaligned-words";
pub const REASON_RATIO: &str = "ratio-out-of-range";
pub const REASON_EMPTY_TEXT: &str = "empty-text";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentEntry {
    /// Word count of the transcription as the aligner saw it.
    pub n_words: usize,
    /// Indices of words the aligner could not anchor to audio.
    pub unaligned: Vec<usize>,
}

/// Per-utterance alignment outcomes, keyed by utt_id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentReport {
    entries: BTreeMap<String, AlignmentEntry>,
}

impl AlignmentReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, utt_id: String, entry: AlignmentEntry) {
        self.entries.insert(utt_id, entry);
    }

    pub fn get(&self, utt_id: &str) -> Option<&AlignmentEntry> {
        self.entries.get(utt_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input: usize,
    pub removed: usize,
    pub output: usize,
    pub params: BTreeMap<String, String>,
    pub removed_ids: Vec<String>,
    /// utt_id -> reason code.
    pub reasons: BTreeMap<String, String>,
}

impl CleaningReport {
    fn new(input: usize, params: BTreeMap<String, String>) -> Self {
        CleaningReport {
            input,
            removed: 0,
            output: input,
            params,
            removed_ids: Vec::new(),
            reasons: BTreeMap::new(),
        }
    }

    fn record_removal(&mut self, utt_id: &str, reason: &str) {
        self.removed += 1;
        self.output -= 1;
        self.removed_ids.push(utt_id.to_string());
        self.reasons.insert(utt_id.to_string(), reason.to_string());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioHistogram {
    pub bin_width: f64,
    /// bin index -> instance count; only occupied bins are present.
    pub counts: BTreeMap<i64, usize>,
    /// Kept interval `[keep_lo, keep_hi)`.
    pub keep_lo: f64,
    pub keep_hi: f64,
}

/// Frames per character of the transcription, counting every codepoint
/// including spaces. `None` when the transcription is empty.
pub fn ratio(instance: &CorpusInstance) -> Option<f64> {
    let n_chars = instance.transcription.chars().count();
    if n_chars == 0 {
        return None;
    }
    Some(instance.n_frames() as f64 / n_chars as f64)
}

fn bin_of(r: f64, width: f64) -> i64 {
    (r / width).floor() as i64
}

#[derive(Debug)]
pub struct FilterOutcome {
    pub kept: Vec<CorpusInstance>,
    pub removed: Vec<CorpusInstance>,
    pub report: CleaningReport,
}

/// Keep exactly the instances whose transcription words all aligned.
/// Every corpus utterance must have a report entry; a missing one is an
/// error, never a silent keep.
pub fn alignment_filter(
    corpus: Vec<CorpusInstance>,
    report: &AlignmentReport,
) -> Result<FilterOutcome> {
    for inst in &corpus {
        match report.get(&inst.utt_id) {
            None => {
                return Err(Error::MissingAlignment {
                    utt_id: inst.utt_id.clone(),
                })
            }
            Some(entry) => {
                if entry.unaligned.iter().any(|&w| w >= entry.n_words) {
                    return Err(Error::BadArgument {
                        op: "alignment_filter",
                        msg: alloc::format!(
                            "utterance '{}': unaligned index beyond {} words",
                            inst.utt_id,
                            entry.n_words
                        ),
                    });
                }
            }
        }
    }
    let mut out = CleaningReport::new(corpus.len(), BTreeMap::new());
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for inst in corpus {
        let entry = report.get(&inst.utt_id).expect("validated above");
        if entry.unaligned.is_empty() {
            kept.push(inst);
        } else {
            out.record_removal(&inst.utt_id, REASON_UNALIGNED);
            removed.push(inst);
        }
    }
    Ok(FilterOutcome {
        kept,
        removed,
        report: out,
    })
}

#[derive(Debug)]
pub struct RatioFilterOutcome {
    pub kept: Vec<CorpusInstance>,
    pub removed: Vec<CorpusInstance>,
    pub histogram: RatioHistogram,
    pub report: CleaningReport,
}

/// Histogram the frames/characters ratios into `[k*w, (k+1)*w)` bins and
/// keep the contiguous run of bins holding at least `min_bin_count`
/// instances around the modal bin. Empty bins do not interrupt a run;
/// occupied bins below the threshold do, which is what cuts off a distant
/// outlier bin even when that bin itself clears the threshold.
pub fn ratio_filter(
    corpus: Vec<CorpusInstance>,
    bin_width: f64,
    min_bin_count: usize,
) -> Result<RatioFilterOutcome> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::BadArgument {
            op: "ratio_filter",
            msg: alloc::format!("bin width must be positive and finite, got {bin_width}"),
        });
    }
    if min_bin_count == 0 {
        return Err(Error::BadArgument {
            op: "ratio_filter",
            msg: String::from("min_bin_count must be at least 1"),
        });
    }
    let ratios: Vec<Option<f64>> = corpus.iter().map(ratio).collect();
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for r in ratios.iter().flatten() {
        *counts.entry(bin_of(*r, bin_width)).or_default() += 1;
    }
    if !counts.values().any(|&c| c >= min_bin_count) {
        return Err(Error::ThresholdTooHigh { min_bin_count });
    }
    // Modal bin: highest count, lowest index on ties. It always clears the
    // threshold, so it sits inside exactly one qualifying run.
    let (&modal_bin, _) = counts
        .iter()
        .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then(kb.cmp(ka)))
        .expect("histogram is non-empty");
    let mut run_lo = modal_bin;
    let mut run_hi = modal_bin;
    for (&k, &c) in counts.range(..modal_bin).rev() {
        if c >= min_bin_count {
            run_lo = k;
        } else {
            break;
        }
    }
    for (&k, &c) in counts.range(modal_bin + 1..) {
        if c >= min_bin_count {
            run_hi = k;
        } else {
            break;
        }
    }
    let keep_lo = run_lo as f64 * bin_width;
    let keep_hi = (run_hi + 1) as f64 * bin_width;

    let mut params = BTreeMap::new();
    params.insert("bin_width".to_string(), alloc::format!("{bin_width}"));
    params.insert(
        "min_bin_count".to_string(),
        alloc::format!("{min_bin_count}"),
    );
    params.insert("keep_lo".to_string(), alloc::format!("{keep_lo}"));
    params.insert("keep_hi".to_string(), alloc::format!("{keep_hi}"));
    let mut report = CleaningReport::new(corpus.len(), params);
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (inst, r) in corpus.into_iter().zip(ratios) {
        match r {
            None => {
                report.record_removal(&inst.utt_id, REASON_EMPTY_TEXT);
                removed.push(inst);
            }
            Some(r) => {
                let b = bin_of(r, bin_width);
                if (run_lo..=run_hi).contains(&b) {
                    kept.push(inst);
                } else {
                    report.record_removal(&inst.utt_id, REASON_RATIO);
                    removed.push(inst);
                }
            }
        }
    }
    Ok(RatioFilterOutcome {
        kept,
        removed,
        histogram: RatioHistogram {
            bin_width,
            counts,
            keep_lo,
            keep_hi,
        },
        report,
    })
}

/// Uniformly draw `n_dev` instances as the development set; both halves
/// keep the original corpus order.
pub fn split_dev(
    corpus: Vec<CorpusInstance>,
    n_dev: usize,
    rng: &mut RngStream,
) -> Result<(Vec<CorpusInstance>, Vec<CorpusInstance>)> {
    if n_dev >= corpus.len() {
        return Err(Error::BadArgument {
            op: "split_dev",
            msg: alloc::format!(
                "dev size {n_dev} must be smaller than the corpus ({})",
                corpus.len()
            ),
        });
    }
    let perm = rng.permutation(corpus.len());
    let mut is_dev = alloc::vec![false; corpus.len()];
    for &i in perm.iter().take(n_dev) {
        is_dev[i] = true;
    }
    let mut train = Vec::with_capacity(corpus.len() - n_dev);
    let mut dev = Vec::with_capacity(n_dev);
    for (inst, dev_flag) in corpus.into_iter().zip(is_dev) {
        if dev_flag {
            dev.push(inst);
        } else {
            train.push(inst);
        }
    }
    Ok((train, dev))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeParams {
    pub skip_alignment: bool,
    pub bin_width: f64,
    pub min_bin_count: usize,
}

pub struct Lineage {
    pub parallel_size: usize,
    pub clean1: Vec<CorpusInstance>,
    pub clean2: Vec<CorpusInstance>,
    pub alignment_report: CleaningReport,
    pub ratio_report: CleaningReport,
    pub histogram: RatioHistogram,
}

/// Run both filters in order: alignment first, ratio second.
pub fn cascade(
    corpus: Vec<CorpusInstance>,
    report: Option<&AlignmentReport>,
    params: &CascadeParams,
) -> Result<Lineage> {
    let parallel_size = corpus.len();
    let (clean1, alignment_report) = if params.skip_alignment {
        let mut p = BTreeMap::new();
        p.insert("skipped".to_string(), "true".to_string());
        (corpus, CleaningReport::new(parallel_size, p))
    } else {
        let report = report.ok_or(Error::BadArgument {
            op: "cascade",
            msg: String::from("alignment report required unless the stage is skipped"),
        })?;
        let outcome = alignment_filter(corpus, report)?;
        (outcome.kept, outcome.report)
    };
    let outcome = ratio_filter(clean1.clone(), params.bin_width, params.min_bin_count)?;
    Ok(Lineage {
        parallel_size,
        clean1,
        clean2: outcome.kept,
        alignment_report,
        ratio_report: outcome.report,
        histogram: outcome.histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FeatureSequence, FEAT_DIM};
    use crate::tensor::Tensor;
    use alloc::vec;
    use proptest::prelude::*;

    fn inst(utt_id: &str, n_frames: usize, n_chars: usize) -> CorpusInstance {
        let frames =
            Tensor::new(vec![n_frames, FEAT_DIM], vec![0.25; n_frames * FEAT_DIM]).unwrap();
        CorpusInstance {
            utt_id: utt_id.to_string(),
            features: FeatureSequence::new(utt_id.to_string(), frames).unwrap(),
            transcription: "c".repeat(n_chars),
            translation: "t".to_string(),
        }
    }

    fn aligned(report: &mut AlignmentReport, utt_id: &str, n_words: usize) {
        report.insert(
            utt_id.to_string(),
            AlignmentEntry {
                n_words,
                unaligned: vec![],
            },
        );
    }

    #[test]
    fn ratio_is_frames_per_codepoint() {
        assert_eq!(ratio(&inst("a", 400, 80)), Some(5.0));
        assert_eq!(ratio(&inst("b", 35, 10)), Some(3.5));
        assert_eq!(ratio(&inst("c", 10, 0)), None);
        // Spaces count.
        let mut spaced = inst("d", 40, 1);
        spaced.transcription = "a b c d e ".to_string();
        assert_eq!(ratio(&spaced), Some(4.0));
    }

    #[test]
    fn alignment_filter_keeps_fully_aligned_only() {
        let corpus = vec![inst("good", 10, 5), inst("bad", 10, 5)];
        let mut report = AlignmentReport::new();
        aligned(&mut report, "good", 2);
        report.insert(
            "bad".to_string(),
            AlignmentEntry {
                n_words: 5,
                unaligned: vec![3],
            },
        );
        let out = alignment_filter(corpus, &report).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].utt_id, "good");
        assert_eq!(out.removed[0].utt_id, "bad");
        assert_eq!(out.report.reasons["bad"], REASON_UNALIGNED);
        assert_eq!(out.report.input, 2);
        assert_eq!(out.report.removed, 1);
        assert_eq!(out.report.output, 1);
    }

    #[test]
    fn alignment_filter_demands_full_coverage() {
        let corpus = vec![inst("known", 10, 5), inst("mystery", 10, 5)];
        let mut report = AlignmentReport::new();
        aligned(&mut report, "known", 2);
        let err = alignment_filter(corpus, &report).unwrap_err();
        assert!(matches!(err, Error::MissingAlignment { utt_id } if utt_id == "mystery"));
    }

    #[test]
    fn alignment_filter_rejects_out_of_range_word_index() {
        let corpus = vec![inst("odd", 10, 5)];
        let mut report = AlignmentReport::new();
        report.insert(
            "odd".to_string(),
            AlignmentEntry {
                n_words: 2,
                unaligned: vec![2],
            },
        );
        assert!(alignment_filter(corpus, &report).is_err());
    }

    #[test]
    fn alignment_filter_removes_planted_failures_exactly() {
        let mut corpus = Vec::new();
        let mut report = AlignmentReport::new();
        for i in 0..10 {
            let id = alloc::format!("u{i}");
            corpus.push(inst(&id, 20, 10));
            let bad = i % 3 == 0; // u0, u3, u6, u9 planted
            report.insert(
                id.clone(),
                AlignmentEntry {
                    n_words: 4,
                    unaligned: if bad { vec![1] } else { vec![] },
                },
            );
        }
        let out = alignment_filter(corpus, &report).unwrap();
        assert_eq!(out.report.removed_ids, vec!["u0", "u3", "u6", "u9"]);
        assert_eq!(out.kept.len() + out.removed.len(), out.report.input);
    }

    /// Ratios 4.0 x10, 5.0 x10, 9.0 x1 at width 0.5 and threshold 5: the
    /// empty bins between 4.5 and 5.0 do not break the kept run, the lone
    /// 9.0 item falls outside it.
    #[test]
    fn ratio_filter_brackets_the_dense_region() {
        let mut corpus = Vec::new();
        for i in 0..10 {
            corpus.push(inst(&alloc::format!("four{i}"), 40, 10));
            corpus.push(inst(&alloc::format!("five{i}"), 50, 10));
        }
        corpus.push(inst("nine", 90, 10));
        let out = ratio_filter(corpus, 0.5, 5).unwrap();
        assert_eq!(out.histogram.keep_lo, 4.0);
        assert_eq!(out.histogram.keep_hi, 5.5);
        assert_eq!(out.kept.len(), 20);
        assert_eq!(out.removed.len(), 1);
        assert_eq!(out.removed[0].utt_id, "nine");
        assert_eq!(out.report.reasons["nine"], REASON_RATIO);
        let total: usize = out.histogram.counts.values().sum();
        assert_eq!(total, 21);
    }

    #[test]
    fn ratio_filter_with_threshold_one_keeps_everything() {
        let corpus = vec![inst("a", 40, 10), inst("b", 90, 10), inst("c", 10, 10)];
        let out = ratio_filter(corpus, 0.5, 1).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert!(out.removed.is_empty());
    }

    #[test]
    fn ratio_filter_cuts_off_a_distant_qualifying_bin() {
        // 9.0 clears the threshold on its own but sits beyond the
        // under-threshold 8.0 bin, so the mode-run rule drops it.
        let mut corpus = Vec::new();
        for i in 0..10 {
            corpus.push(inst(&alloc::format!("four{i}"), 40, 10));
            corpus.push(inst(&alloc::format!("five{i}"), 50, 10));
        }
        for i in 0..2 {
            corpus.push(inst(&alloc::format!("eight{i}"), 80, 10));
        }
        for i in 0..6 {
            corpus.push(inst(&alloc::format!("nine{i}"), 90, 10));
        }
        let out = ratio_filter(corpus, 0.5, 5).unwrap();
        assert_eq!(out.histogram.keep_lo, 4.0);
        assert_eq!(out.histogram.keep_hi, 5.5);
        assert_eq!(out.kept.len(), 20);
        assert_eq!(out.removed.len(), 8);
    }

    #[test]
    fn ratio_filter_rejects_unreachable_threshold() {
        let corpus = vec![inst("a", 40, 10), inst("b", 50, 10)];
        let err = ratio_filter(corpus, 0.5, 5).unwrap_err();
        assert!(matches!(err, Error::ThresholdTooHigh { min_bin_count: 5 }));
    }

    #[test]
    fn ratio_filter_removes_empty_transcriptions() {
        let mut corpus = vec![inst("empty", 40, 0)];
        for i in 0..5 {
            corpus.push(inst(&alloc::format!("ok{i}"), 40, 10));
        }
        let out = ratio_filter(corpus, 0.5, 5).unwrap();
        assert_eq!(out.report.reasons["empty"], REASON_EMPTY_TEXT);
        assert_eq!(out.kept.len(), 5);
    }

    #[test]
    fn split_dev_is_disjoint_and_seed_stable() {
        let corpus: Vec<CorpusInstance> = (0..5)
            .map(|i| inst(&alloc::format!("u{i}"), 10, 5))
            .collect();
        let mut rng = RngStream::new(11, "split");
        let (train, dev) = split_dev(corpus.clone(), 2, &mut rng).unwrap();
        assert_eq!(train.len(), 3);
        assert_eq!(dev.len(), 2);
        for d in &dev {
            assert!(!train.iter().any(|t| t.utt_id == d.utt_id));
        }
        let mut rng2 = RngStream::new(11, "split");
        let (train2, dev2) = split_dev(corpus.clone(), 2, &mut rng2).unwrap();
        assert_eq!(train, train2);
        assert_eq!(dev, dev2);

        let mut rng3 = RngStream::new(12, "split");
        let big: Vec<CorpusInstance> = (0..60)
            .map(|i| inst(&alloc::format!("u{i}"), 10, 5))
            .collect();
        let mut rng4 = RngStream::new(13, "split");
        let (_, dev_a) = split_dev(big.clone(), 20, &mut rng3).unwrap();
        let (_, dev_b) = split_dev(big, 20, &mut rng4).unwrap();
        assert_ne!(dev_a, dev_b);
    }

    #[test]
    fn split_dev_rejects_oversized_dev() {
        let corpus: Vec<CorpusInstance> = (0..3)
            .map(|i| inst(&alloc::format!("u{i}"), 10, 5))
            .collect();
        let mut rng = RngStream::new(1, "split");
        assert!(split_dev(corpus, 3, &mut rng).is_err());
    }

    #[test]
    fn cascade_skip_flag_passes_alignment_through() {
        let corpus: Vec<CorpusInstance> = (0..6)
            .map(|i| inst(&alloc::format!("u{i}"), 40, 10))
            .collect();
        let params = CascadeParams {
            skip_alignment: true,
            bin_width: 0.5,
            min_bin_count: 1,
        };
        let lineage = cascade(corpus.clone(), None, &params).unwrap();
        assert_eq!(lineage.clean1, corpus);
        assert_eq!(lineage.alignment_report.removed, 0);
        assert_eq!(lineage.clean2.len(), 6);
    }

    #[test]
    fn cascade_reproduces_hand_computed_lineage() {
        // 12 instances: 3 planted alignment failures, then 2 ratio
        // outliers among the 9 survivors.
        let mut corpus = Vec::new();
        let mut report = AlignmentReport::new();
        for i in 0..12 {
            let id = alloc::format!("u{i}");
            let (frames, chars) = match i {
                10 | 11 => (90, 10),
                _ => (40, 10),
            };
            corpus.push(inst(&id, frames, chars));
            report.insert(
                id.clone(),
                AlignmentEntry {
                    n_words: 3,
                    unaligned: if i < 3 { vec![0] } else { vec![] },
                },
            );
        }
        let params = CascadeParams {
            skip_alignment: false,
            bin_width: 0.5,
            min_bin_count: 5,
        };
        let lineage = cascade(corpus, Some(&report), &params).unwrap();
        assert_eq!(lineage.parallel_size, 12);
        assert_eq!(lineage.clean1.len(), 9);
        assert_eq!(lineage.clean2.len(), 7);
        assert_eq!(lineage.alignment_report.removed_ids, vec!["u0", "u1", "u2"]);
        assert_eq!(lineage.ratio_report.removed_ids, vec!["u10", "u11"]);
    }

    proptest! {
        #[test]
        fn ratio_filter_is_idempotent(frame_counts in proptest::collection::vec(10usize..200, 8..60)) {
            let corpus: Vec<CorpusInstance> = frame_counts
                .iter()
                .enumerate()
                .map(|(i, &n)| inst(&alloc::format!("u{i}"), n, 10))
                .collect();
            if let Ok(first) = ratio_filter(corpus, 0.5, 3) {
                let n_kept = first.kept.len();
                let second = ratio_filter(first.kept, 0.5, 3).unwrap();
                prop_assert_eq!(second.kept.len(), n_kept);
                prop_assert!(second.removed.is_empty());
            }
        }

        #[test]
        fn filters_partition_the_input(frame_counts in proptest::collection::vec(10usize..200, 2..40)) {
            let corpus: Vec<CorpusInstance> = frame_counts
                .iter()
                .enumerate()
                .map(|(i, &n)| inst(&alloc::format!("u{i}"), n, 10))
                .collect();
            let n = corpus.len();
            if let Ok(out) = ratio_filter(corpus, 0.5, 2) {
                prop_assert_eq!(out.kept.len() + out.removed.len(), n);
                prop_assert_eq!(out.report.input, n);
                prop_assert_eq!(out.report.removed + out.report.output, n);
                let mut ids: Vec<String> = out.kept.iter().chain(&out.removed).map(|x| x.utt_id.clone()).collect();
                ids.sort();
                let mut expect: Vec<String> = (0..n).map(|i| alloc::format!("u{i}")).collect();
                expect.sort();
                prop_assert_eq!(ids, expect);
            }
        }
    }
}
