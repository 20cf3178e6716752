//! Corpus manifests: UTF-8 TSV, one instance per line,
//! `utt_id \t feature_path \t transcription \t translation`, no header.
//! Feature paths are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use stforge_core::corpus::{CorpusInstance, FeatureSequence};

use crate::error::{io_err, CliError, Result};
use crate::formats::features::read_features;

/// One manifest line with its feature file still on disk. `feature_path`
/// is absolute after reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub feature_path: PathBuf,
    pub transcription: String,
    pub translation: String,
}

pub fn read_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let fail = |line: usize, msg: String| CliError::Line {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 {
            return Err(fail(
                line,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].is_empty() {
            return Err(fail(line, "empty utt_id".into()));
        }
        if !seen.insert(cols[0].to_string()) {
            return Err(fail(line, format!("duplicate utt_id '{}'", cols[0])));
        }
        if cols[3].is_empty() {
            return Err(fail(line, "empty translation".into()));
        }
        let feature_path = base.join(cols[1]);
        if !feature_path.is_file() {
            return Err(fail(
                line,
                format!("feature file {} does not exist", feature_path.display()),
            ));
        }
        let feature_path =
            std::path::absolute(&feature_path).map_err(|e| io_err(&feature_path, e))?;
        entries.push(ManifestEntry {
            utt_id: cols[0].to_string(),
            feature_path,
            transcription: cols[2].to_string(),
            translation: cols[3].to_string(),
        });
    }
    if entries.is_empty() {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            msg: "manifest has no instances".into(),
        });
    }
    Ok(entries)
}

/// Load the feature files behind the entries.
pub fn load_instances(entries: &[ManifestEntry]) -> Result<Vec<CorpusInstance>> {
    entries
        .iter()
        .map(|e| {
            let frames = read_features(&e.feature_path)?;
            let features = FeatureSequence::new(e.utt_id.clone(), frames)?;
            Ok(CorpusInstance {
                utt_id: e.utt_id.clone(),
                features,
                transcription: e.transcription.clone(),
                translation: e.translation.clone(),
            })
        })
        .collect()
}

pub fn read_instances(path: &Path) -> Result<Vec<CorpusInstance>> {
    load_instances(&read_entries(path)?)
}

/// Write a manifest; feature paths under the manifest's directory come out
/// relative, anything else stays absolute.
pub fn write_entries(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let base = std::path::absolute(base).map_err(|e| io_err(base, e))?;
    let mut out = String::new();
    for e in entries {
        for (field, name) in [
            (&e.utt_id, "utt_id"),
            (&e.transcription, "transcription"),
            (&e.translation, "translation"),
        ] {
            if field.contains('\t') || field.contains('\n') {
                return Err(CliError::Format {
                    path: path.to_path_buf(),
                    msg: format!("{name} of '{}' contains a tab or newline", e.utt_id),
                });
            }
        }
        let abs = std::path::absolute(&e.feature_path).map_err(|x| io_err(&e.feature_path, x))?;
        let shown = abs.strip_prefix(&base).unwrap_or(&abs);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.utt_id,
            shown.display(),
            e.transcription,
            e.translation
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Keep the entries whose utt_id appears in `instances`, in instance
/// order. Used to turn a filtered corpus back into a manifest.
pub fn select_entries(
    entries: &[ManifestEntry],
    instances: &[CorpusInstance],
) -> Vec<ManifestEntry> {
    let by_id: std::collections::BTreeMap<&str, &ManifestEntry> =
        entries.iter().map(|e| (e.utt_id.as_str(), e)).collect();
    instances
        .iter()
        .filter_map(|i| by_id.get(i.utt_id.as_str()).map(|e| (*e).clone()))
        .collect()
}
