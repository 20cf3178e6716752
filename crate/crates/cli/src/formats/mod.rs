//! On-disk formats: feature files, corpus manifests, vocabulary files,
//! alignment reports and checkpoints.

pub mod alignment;
pub mod checkpoint;
pub mod features;
pub mod manifest;
pub mod vocab_file;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{io_err, Result};

/// Pretty-printed JSON with a trailing newline; used for every report the
/// CLI emits.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}
