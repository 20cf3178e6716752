//! Deterministic synthetic corpora for smoke tests and oracles: random
//! feature sequences with word-like transcriptions and translations, plus
//! optional planted cleaning failures whose ids are recorded next to the
//! data.
//!
//! Frame counts are derived from the transcription length so that every
//! ordinary instance lands inside a configured frames-per-character band,
//! one ratio bin at a time; planted ratio outliers go to isolated bins
//! well above the band where no qualifying run can reach them.

use std::fs;
use std::path::Path;

use serde::Serialize;
use stforge_core::cleaning::AlignmentEntry;
use stforge_core::{RngStream, Tensor};

use crate::error::{io_err, CliError, Result};
use crate::formats::alignment::write_alignment;
use crate::formats::features::write_features;
use crate::formats::manifest::{write_entries, ManifestEntry};

const ALPHABET: &[u8] = b"aeinost";
const BIN_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    /// Instances whose alignment entry lists unaligned words.
    pub plant_align: usize,
    /// Instances whose frames/character ratio sits far outside the band.
    pub plant_ratio: usize,
    /// Words per text, inclusive bounds.
    pub words: (usize, usize),
    /// Characters per word, inclusive bounds; at least 3 so rounding the
    /// frame count cannot move an instance across a bin edge.
    pub word_len: (usize, usize),
    /// Ordinary frames-per-character band `[lo, hi)`; both ends must be
    /// multiples of the 0.5 bin width.
    pub ratio_band: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 60,
            seed: 7,
            plant_align: 0,
            plant_ratio: 0,
            words: (1, 3),
            word_len: (3, 5),
            ratio_band: (4.0, 6.0),
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let usage = |msg: String| CliError::Usage { msg };
        if self.n == 0 {
            return Err(usage("need at least one instance".into()));
        }
        if self.plant_align + self.plant_ratio > self.n {
            return Err(usage(format!(
                "{} planted failures exceed the corpus size {}",
                self.plant_align + self.plant_ratio,
                self.n
            )));
        }
        if self.words.0 == 0 || self.words.0 > self.words.1 {
            return Err(usage(format!("bad word count bounds {:?}", self.words)));
        }
        if self.word_len.0 < 3 || self.word_len.0 > self.word_len.1 {
            return Err(usage(format!(
                "word length bounds {:?} must be ascending and start at 3 or more",
                self.word_len
            )));
        }
        let (lo, hi) = self.ratio_band;
        let on_grid = |v: f64| (v / BIN_WIDTH - (v / BIN_WIDTH).round()).abs() < 1e-9;
        if !(lo > 0.0) || !(hi > lo) || !on_grid(lo) || !on_grid(hi) {
            return Err(usage(format!(
                "ratio band {:?} must be an ascending positive range on the {BIN_WIDTH} grid",
                self.ratio_band
            )));
        }
        Ok(())
    }
}

/// Ground truth for the planted failures, also written as `planted.json`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PlantedSets {
    pub align: Vec<String>,
    pub ratio: Vec<String>,
}

fn random_text(rng: &mut RngStream, words: (usize, usize), word_len: (usize, usize)) -> String {
    let n_words = words.0 + rng.index(words.1 - words.0 + 1);
    let mut out = String::new();
    for w in 0..n_words {
        if w > 0 {
            out.push(' ');
        }
        let len = word_len.0 + rng.index(word_len.1 - word_len.0 + 1);
        for _ in 0..len {
            out.push(ALPHABET[rng.index(ALPHABET.len())] as char);
        }
    }
    out
}

/// Generate the corpus under `out_dir`: `feats/*.stfeat`, `manifest.tsv`,
/// `alignment.tsv` and `planted.json`.
pub fn generate(out_dir: &Path, spec: &SynthSpec) -> Result<PlantedSets> {
    spec.validate()?;
    let feat_dir = out_dir.join("feats");
    fs::create_dir_all(&feat_dir).map_err(|e| io_err(&feat_dir, e))?;

    let mut rng = RngStream::new(spec.seed, "synth");
    let roles = rng.permutation(spec.n);

    let lo_bin = (spec.ratio_band.0 / BIN_WIDTH).round() as i64;
    let hi_bin = (spec.ratio_band.1 / BIN_WIDTH).round() as i64;
    let n_bins = (hi_bin - lo_bin) as usize;

    let mut entries = Vec::with_capacity(spec.n);
    let mut align_rows = Vec::with_capacity(spec.n);
    let mut planted = PlantedSets::default();
    let mut in_band = 0usize;
    let mut outliers = 0usize;

    for (i, &role) in roles.iter().enumerate() {
        let utt_id = format!("synth-{i:04}");
        let align_bad = role < spec.plant_align;
        let ratio_bad = !align_bad && role < spec.plant_align + spec.plant_ratio;

        let transcription = random_text(&mut rng, spec.words, spec.word_len);
        let translation = random_text(&mut rng, spec.words, spec.word_len);
        let n_chars = transcription.chars().count();

        let bin = if ratio_bad {
            // Isolated occupied bins two apart, starting two bins above
            // the band: never contiguous with it and never with each other.
            let b = hi_bin + 2 + 2 * outliers as i64;
            outliers += 1;
            b
        } else {
            let b = lo_bin + (in_band % n_bins) as i64;
            in_band += 1;
            b
        };
        let target_ratio = (bin as f64 + 0.5) * BIN_WIDTH;
        let n_frames = ((n_chars as f64) * target_ratio).round() as usize;

        let data: Vec<f32> = (0..n_frames * stforge_core::corpus::FEAT_DIM)
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect();
        let frames =
            Tensor::new(vec![n_frames, stforge_core::corpus::FEAT_DIM], data).expect("shape");
        let feature_path = feat_dir.join(format!("{utt_id}.stfeat"));
        write_features(&feature_path, &frames)?;

        let n_words = transcription.split(' ').count();
        let unaligned = if align_bad {
            planted.align.push(utt_id.clone());
            vec![rng.index(n_words)]
        } else {
            Vec::new()
        };
        if ratio_bad {
            planted.ratio.push(utt_id.clone());
        }
        align_rows.push((utt_id.clone(), AlignmentEntry { n_words, unaligned }));

        entries.push(ManifestEntry {
            utt_id,
            feature_path,
            transcription,
            translation,
        });
    }

    write_entries(&out_dir.join("manifest.tsv"), &entries)?;
    write_alignment(&out_dir.join("alignment.tsv"), &align_rows)?;
    crate::formats::write_json(&out_dir.join("planted.json"), &planted)?;
    Ok(planted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::manifest::read_instances;
    use stforge_core::cleaning::ratio;

    #[test]
    fn same_seed_reproduces_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n: 12,
            seed: 3,
            plant_align: 2,
            plant_ratio: 2,
            ..SynthSpec::default()
        };
        generate(a.path(), &spec).unwrap();
        generate(b.path(), &spec).unwrap();
        let ma = fs::read(a.path().join("manifest.tsv")).unwrap();
        let mb = fs::read(b.path().join("manifest.tsv")).unwrap();
        assert_eq!(ma, mb);
        let fa = fs::read(a.path().join("feats/synth-0003.stfeat")).unwrap();
        let fb = fs::read(b.path().join("feats/synth-0003.stfeat")).unwrap();
        assert_eq!(fa, fb);
    }

    #[test]
    fn ordinary_ratios_stay_in_band_and_outliers_leave_it() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n: 30,
            seed: 5,
            plant_ratio: 4,
            ..SynthSpec::default()
        };
        let planted = generate(dir.path(), &spec).unwrap();
        assert_eq!(planted.ratio.len(), 4);
        let corpus = read_instances(&dir.path().join("manifest.tsv")).unwrap();
        for inst in &corpus {
            let r = ratio(inst).unwrap();
            if planted.ratio.contains(&inst.utt_id) {
                assert!(r >= spec.ratio_band.1 + 1.0, "{}: {r}", inst.utt_id);
            } else {
                assert!(
                    r >= spec.ratio_band.0 && r < spec.ratio_band.1,
                    "{}: {r}",
                    inst.utt_id
                );
            }
        }
    }

    #[test]
    fn planted_sets_are_disjoint_and_sized() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n: 60,
            seed: 7,
            plant_align: 10,
            plant_ratio: 8,
            ..SynthSpec::default()
        };
        let planted = generate(dir.path(), &spec).unwrap();
        assert_eq!(planted.align.len(), 10);
        assert_eq!(planted.ratio.len(), 8);
        assert!(planted.align.iter().all(|id| !planted.ratio.contains(id)));
    }
}
