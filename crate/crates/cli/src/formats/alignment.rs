//! Alignment reports: UTF-8 TSV, one utterance per line,
//! `utt_id \t n_words \t i,j,k` where the last column lists the indices
//! of unaligned words and is empty when everything aligned.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use stforge_core::cleaning::{AlignmentEntry, AlignmentReport};

use crate::error::{io_err, CliError, Result};

pub fn read_alignment(path: &Path) -> Result<AlignmentReport> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let fail = |line: usize, msg: String| CliError::Line {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut report = AlignmentReport::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(fail(
                line,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        if !seen.insert(cols[0].to_string()) {
            return Err(fail(line, format!("duplicate utt_id '{}'", cols[0])));
        }
        let n_words: usize = cols[1]
            .parse()
            .map_err(|_| fail(line, format!("bad word count '{}'", cols[1])))?;
        let mut unaligned = Vec::new();
        if !cols[2].is_empty() {
            for part in cols[2].split(',') {
                let idx: usize = part
                    .parse()
                    .map_err(|_| fail(line, format!("bad word index '{part}'")))?;
                if idx >= n_words {
                    return Err(fail(line, format!("word index {idx} outside 0..{n_words}")));
                }
                unaligned.push(idx);
            }
        }
        report.insert(cols[0].to_string(), AlignmentEntry { n_words, unaligned });
    }
    Ok(report)
}

/// Write entries as `(utt_id, n_words, unaligned)` rows, in the given order.
pub fn write_alignment(path: &Path, rows: &[(String, AlignmentEntry)]) -> Result<()> {
    let mut out = String::new();
    for (utt_id, entry) in rows {
        let idx: Vec<String> = entry.unaligned.iter().map(|i| i.to_string()).collect();
        out.push_str(&format!("{utt_id}\t{}\t{}\n", entry.n_words, idx.join(",")));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_empty_and_filled_index_lists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tsv");
        fs::write(&path, "u1\t5\t\nu2\t4\t0,3\n").unwrap();
        let report = read_alignment(&path).unwrap();
        assert_eq!(report.get("u1").unwrap().unaligned, Vec::<usize>::new());
        assert_eq!(report.get("u2").unwrap().unaligned, vec![0, 3]);
        assert_eq!(report.get("u2").unwrap().n_words, 4);
    }

    #[test]
    fn out_of_range_index_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tsv");
        fs::write(&path, "u1\t2\t\nu2\t2\t2\n").unwrap();
        assert!(matches!(
            read_alignment(&path).unwrap_err(),
            CliError::Line { line: 2, .. }
        ));
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tsv");
        let rows = vec![
            (
                "x".to_string(),
                AlignmentEntry {
                    n_words: 3,
                    unaligned: vec![1, 2],
                },
            ),
            (
                "y".to_string(),
                AlignmentEntry {
                    n_words: 1,
                    unaligned: vec![],
                },
            ),
        ];
        write_alignment(&path, &rows).unwrap();
        let report = read_alignment(&path).unwrap();
        for (id, entry) in &rows {
            assert_eq!(report.get(id).unwrap(), entry);
        }
    }
}
