//! The run configuration: one JSON document with a section per module.
//! Every field has a default, so an empty object `{}` is a complete
//! config; unknown keys anywhere are rejected rather than ignored.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stforge_core::infer::DecodeConfig;
use stforge_core::model::ModelConfig;
use stforge_core::train::{LossConfig, OptimizerConfig, TrainingConfig};

use crate::error::{io_err, CliError, Result};

pub const SEED_ENV: &str = "ST_FORGE_SEED";

/// Names a dataset of the cleaning lineage a pipeline stage trains on.
pub const STAGE_NAMES: [&str; 3] = ["parallel", "clean1", "clean2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest of the raw parallel corpus.
    pub manifest: Option<String>,
    /// Alignment report for the first cleaning stage.
    pub alignment: Option<String>,
    /// Held-out manifest to translate and score; the dev split is used
    /// when absent.
    pub eval_manifest: Option<String>,
    /// Datasets the pipeline's training stages run on, in order; each is
    /// one of "parallel", "clean1", "clean2". Empty means the full
    /// parallel -> clean1 -> clean2 cascade.
    pub stages: Vec<String>,
}

impl DataSection {
    pub fn effective_stages(&self) -> Vec<String> {
        if self.stages.is_empty() {
            STAGE_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            self.stages.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    /// Skip the alignment filter (no report available).
    pub skip_alignment: bool,
    pub bin_width: f64,
    pub min_bin_count: usize,
    /// Development split size in instances.
    pub n_dev: usize,
}

impl Default for CleaningSection {
    fn default() -> Self {
        CleaningSection {
            skip_alignment: false,
            bin_width: 0.5,
            min_bin_count: 5000,
            n_dev: 1000,
        }
    }
}

/// Decoding plus the checkpoint-averaging window that feeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam_size: usize,
    pub max_len_ratio: f64,
    pub length_norm: bool,
    /// How many trailing checkpoints averaging may select from.
    pub avg_window: usize,
    /// A checkpoint joins the average when it is less than this many BLEU
    /// points worse than the window's best.
    pub avg_margin: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            beam_size: 4,
            max_len_ratio: 1.5,
            length_norm: false,
            avg_window: 10,
            avg_margin: 0.5,
        }
    }
}

impl DecodeSection {
    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            beam_size: self.beam_size,
            max_len_ratio: self.max_len_ratio,
            length_norm: self.length_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub cleaning: CleaningSection,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub training: TrainingConfig,
    pub decode: DecodeSection,
}

impl RunConfig {
    /// Read a config file, or start from pure defaults when no path is
    /// given. `ST_FORGE_SEED` overrides the configured seed either way.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Json {
                    path: p.to_path_buf(),
                    msg: e.to_string(),
                })?
            }
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.training.seed = v.parse().map_err(|_| CliError::Usage {
                msg: format!("{SEED_ENV} must be an unsigned integer, got '{v}'"),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        self.decode.decode_config().validate()?;
        if self.decode.avg_window == 0 {
            return Err(CliError::Usage {
                msg: "decode.avg_window must be at least 1".into(),
            });
        }
        if !(self.decode.avg_margin > 0.0) {
            return Err(CliError::Usage {
                msg: format!(
                    "decode.avg_margin must be positive, got {}",
                    self.decode.avg_margin
                ),
            });
        }
        for stage in &self.data.stages {
            if !STAGE_NAMES.contains(&stage.as_str()) {
                return Err(CliError::Usage {
                    msg: format!("unknown stage '{stage}'; expected one of {STAGE_NAMES:?}"),
                });
            }
        }
        Ok(())
    }

    /// The serialized form echoed into run directories: defaults applied,
    /// stable field order, trailing newline.
    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_a_complete_config() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.optimizer.lr, 0.001);
        assert_eq!(cfg.model.dropout, 0.2);
        assert_eq!(cfg.optimizer.clip_norm, 5.0);
        assert_eq!(cfg.loss.correct_mass, 0.9);
        assert_eq!(cfg.decode.avg_window, 10);
        assert_eq!(cfg.decode.avg_margin, 0.5);
        assert_eq!(cfg.cleaning.n_dev, 1000);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"optimizer": {"lr": 0.1, "mu": 2}}"#).is_err()
        );
    }

    #[test]
    fn config_round_trips_through_its_echo() {
        let cfg = RunConfig::default();
        let echo = cfg.to_pretty_json();
        let back: RunConfig = serde_json::from_str(&echo).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn bad_stage_name_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.data.stages = vec!["clean3".into()];
        assert!(matches!(cfg.validate(), Err(CliError::Usage { .. })));
    }
}
