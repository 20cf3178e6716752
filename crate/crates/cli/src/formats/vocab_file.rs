//! Vocabulary files: UTF-8, the four reserved tokens as a fixed preamble,
//! then one symbol per line in id order.

use std::fs;
use std::path::Path;

use stforge_core::vocab::CharVocab;

use crate::error::{io_err, CliError, Result};

const PREAMBLE: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub fn write_vocab(path: &Path, vocab: &CharVocab) -> Result<()> {
    let mut out = String::new();
    for tok in PREAMBLE {
        out.push_str(tok);
        out.push('\n');
    }
    for &c in vocab.symbols() {
        out.push(c);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_vocab(path: &Path) -> Result<CharVocab> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let fail = |line: usize, msg: String| CliError::Line {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut chars = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if line <= PREAMBLE.len() {
            let want = PREAMBLE[line - 1];
            if raw != want {
                return Err(fail(
                    line,
                    format!("expected reserved token '{want}', found '{raw}'"),
                ));
            }
            continue;
        }
        let mut it = raw.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => chars.push(c),
            _ => {
                return Err(fail(
                    line,
                    format!("expected exactly one symbol, found '{raw}'"),
                ))
            }
        }
    }
    if chars.is_empty() {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            msg: "vocabulary has no symbols beyond the reserved preamble".into(),
        });
    }
    CharVocab::from_symbols(chars).map_err(|e| match e {
        stforge_core::Error::BadArgument { msg, .. } => CliError::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        },
        other => other.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_the_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let vocab = CharVocab::build(["hello world", "hola"]).unwrap();
        write_vocab(&path, &vocab).unwrap();
        let back = read_vocab(&path).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(back.fingerprint(), vocab.fingerprint());
    }

    #[test]
    fn tampered_preamble_is_rejected_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        write_vocab(&path, &CharVocab::build(["ab"]).unwrap()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("<eos>", "<end>");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            read_vocab(&path).unwrap_err(),
            CliError::Line { line: 3, .. }
        ));
    }

    #[test]
    fn out_of_order_symbols_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "<pad>\n<bos>\n<eos>\n<unk>\nb\na\n").unwrap();
        assert!(read_vocab(&path).is_err());
    }
}
