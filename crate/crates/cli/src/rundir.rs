//! Run directories. Every subcommand works inside one:
//!
//! ```text
//! run/
//!   config.json     effective configuration, defaults applied
//!   inputs.json     sha-256 of every input file the run consumed
//!   lock            held while a process owns the directory
//!   manifests/  checkpoints/  logs/  reports/
//! ```
//!
//! A directory is owned by one process at a time, nothing is overwritten
//! without `--force`, and a recorded input changing its hash between
//! subcommands is an error: together these keep a finished run
//! re-runnable from its own config and inputs alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use stforge_core::hash::sha256_hex;

use crate::config::RunConfig;
use crate::error::{io_err, CliError, Result};

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    force: bool,
    lock: Option<PathBuf>,
}

impl RunDir {
    /// Create or re-enter a run directory, acquiring its lock.
    pub fn open(root: &Path, cfg: &RunConfig, force: bool) -> Result<RunDir> {
        for sub in ["manifests", "checkpoints", "logs", "reports"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        let lock = root.join("lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::Locked { path: lock })
            }
            Err(e) => return Err(io_err(&lock, e)),
        }
        let run = RunDir {
            root: root.to_path_buf(),
            force,
            lock: Some(lock),
        };
        run.echo_config(cfg)?;
        Ok(run)
    }

    fn echo_config(&self, cfg: &RunConfig) -> Result<()> {
        let path = self.root.join("config.json");
        let text = cfg.to_pretty_json();
        if path.exists() {
            let existing = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            if existing == text {
                return Ok(());
            }
            if !self.force {
                return Err(CliError::ConfigMismatch { path });
            }
        }
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(name)
    }

    pub fn checkpoint_dir(&self, stage: Option<&str>) -> Result<PathBuf> {
        let dir = match stage {
            None => self.root.join("checkpoints"),
            Some(s) => self.root.join("checkpoints").join(s),
        };
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }

    pub fn log_path(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    /// Fail if `path` exists and `--force` was not given; the guard every
    /// output file goes through.
    pub fn claim(&self, path: PathBuf) -> Result<PathBuf> {
        if path.exists() && !self.force {
            return Err(CliError::Exists { path });
        }
        Ok(path)
    }

    /// Claim a whole stage's checkpoint directory: an earlier run's epoch
    /// files make it an error without `--force` and are removed with it,
    /// so a shorter rerun cannot leave stale epochs behind.
    pub fn claim_checkpoint_dir(&self, stage: Option<&str>) -> Result<PathBuf> {
        let dir = self.checkpoint_dir(stage)?;
        let mut stale = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let p = entry.map_err(|e| io_err(&dir, e))?.path();
            if p.extension().is_some_and(|x| x == "stck") {
                stale.push(p);
            }
        }
        if !stale.is_empty() {
            if !self.force {
                return Err(CliError::Exists { path: dir });
            }
            for p in stale {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
        Ok(dir)
    }

    /// Record the inputs' content hashes into `inputs.json`, verifying
    /// files already recorded by an earlier subcommand have not changed.
    pub fn record_inputs(&self, paths: &[&Path]) -> Result<()> {
        let index = self.root.join("inputs.json");
        let mut map: BTreeMap<String, String> = if index.exists() {
            let text = fs::read_to_string(&index).map_err(|e| io_err(&index, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Json {
                path: index.clone(),
                msg: e.to_string(),
            })?
        } else {
            BTreeMap::new()
        };
        for path in paths {
            let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
            let hash = sha256_hex(&bytes);
            let key = path.display().to_string();
            match map.get(&key) {
                Some(old) if *old != hash && !self.force => {
                    return Err(CliError::InputChanged {
                        path: path.to_path_buf(),
                    })
                }
                _ => {
                    map.insert(key, hash);
                }
            }
        }
        let mut text = serde_json::to_string_pretty(&map).expect("hash map serializes");
        text.push('\n');
        fs::write(&index, text).map_err(|e| io_err(&index, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if let Some(lock) = self.lock.take() {
            let _ = fs::remove_file(lock);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_blocks_a_second_owner_and_is_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let cfg = RunConfig::default();
        let first = RunDir::open(&root, &cfg, false).unwrap();
        assert!(matches!(
            RunDir::open(&root, &cfg, false).unwrap_err(),
            CliError::Locked { .. }
        ));
        drop(first);
        RunDir::open(&root, &cfg, false).unwrap();
    }

    #[test]
    fn differing_config_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let cfg = RunConfig::default();
        drop(RunDir::open(&root, &cfg, false).unwrap());
        let mut other = RunConfig::default();
        other.training.seed = 99;
        assert!(matches!(
            RunDir::open(&root, &other, false).unwrap_err(),
            CliError::ConfigMismatch { .. }
        ));
        drop(RunDir::open(&root, &other, true).unwrap());
        let text = fs::read_to_string(root.join("config.json")).unwrap();
        assert!(text.contains("\"seed\": 99"));
    }

    #[test]
    fn claim_refuses_existing_outputs_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let cfg = RunConfig::default();
        let run = RunDir::open(&root, &cfg, false).unwrap();
        let out = run.manifest_path("x.tsv");
        fs::write(&out, "y").unwrap();
        assert!(matches!(
            run.claim(out.clone()).unwrap_err(),
            CliError::Exists { .. }
        ));
        drop(run);
        let run = RunDir::open(&root, &cfg, true).unwrap();
        run.claim(out).unwrap();
    }

    #[test]
    fn changed_input_hash_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("run");
        let input = dir.path().join("data.tsv");
        fs::write(&input, "v1").unwrap();
        let cfg = RunConfig::default();
        let run = RunDir::open(&root, &cfg, false).unwrap();
        run.record_inputs(&[&input]).unwrap();
        run.record_inputs(&[&input]).unwrap();
        fs::write(&input, "v2").unwrap();
        assert!(matches!(
            run.record_inputs(&[&input]).unwrap_err(),
            CliError::InputChanged { .. }
        ));
    }
}
