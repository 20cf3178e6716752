use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::Params;
use crate::tensor::{Real, Tensor};

/// A frozen copy of the model: every named parameter tensor, the config
/// that shaped them, the vocabulary fingerprint they were trained against,
/// and where in training they came from. Parameters are stored in
/// registration order as 32-bit values, matching the on-disk payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_fingerprint: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub val_bleu: Option<f64>,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_params<F: Real>(
        params: &Params<F>,
        config: &ModelConfig,
        vocab_fingerprint: &str,
        epoch: usize,
        val_loss: f64,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab_fingerprint: String::from(vocab_fingerprint),
            epoch,
            val_loss,
            val_bleu: None,
            params: params
                .iter()
                .map(|(name, value)| (String::from(name), value.cast::<f32>()))
                .collect(),
        }
    }

    /// Rebuild a parameter registry from the stored tensors, in the stored
    /// order.
    pub fn to_params<F: Real>(&self) -> Result<Params<F>> {
        let mut out = Params::new();
        for (name, value) in &self.params {
            out.register(name, value.cast::<F>())?;
        }
        Ok(out)
    }

    /// Check that this checkpoint fits a target model: same config, same
    /// vocabulary fingerprint, and for an already-built registry the same
    /// names and shapes. Loading goes through here first.
    pub fn verify_compatible<F: Real>(
        &self,
        config: &ModelConfig,
        vocab_fingerprint: &str,
        params: &Params<F>,
    ) -> Result<()> {
        if self.vocab_fingerprint != vocab_fingerprint {
            return Err(Error::VocabMismatch {
                expected: String::from(vocab_fingerprint),
                found: self.vocab_fingerprint.clone(),
            });
        }
        if &self.config != config {
            return Err(Error::ParamMismatch {
                name: String::from("config"),
                msg: String::from("checkpoint was built from a different model config"),
            });
        }
        if self.params.len() != params.len() {
            return Err(Error::ParamMismatch {
                name: String::from("params"),
                msg: format!(
                    "checkpoint holds {} tensors, model has {}",
                    self.params.len(),
                    params.len()
                ),
            });
        }
        for (name, value) in &self.params {
            let slot = params.slot(name).ok_or_else(|| Error::ParamMismatch {
                name: name.clone(),
                msg: String::from("not a parameter of the target model"),
            })?;
            if params.value(slot).shape() != value.shape() {
                return Err(Error::ParamMismatch {
                    name: name.clone(),
                    msg: format!(
                        "shape {:?} in checkpoint, {:?} in model",
                        value.shape(),
                        params.value(slot).shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Copy the stored tensors into an existing registry after
    /// `verify_compatible` has passed.
    pub fn restore_into<F: Real>(
        &self,
        config: &ModelConfig,
        vocab_fingerprint: &str,
        params: &mut Params<F>,
    ) -> Result<()> {
        self.verify_compatible(config, vocab_fingerprint, params)?;
        for (name, value) in &self.params {
            let slot = params.slot(name).expect("verified above");
            *params.value_mut(slot) = value.cast::<F>();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, tiny_config};

    #[test]
    fn round_trip_preserves_every_tensor() {
        let cfg = tiny_config();
        let params = init_params::<f32>(&cfg, 9, 3).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, "fp", 4, 1.25);
        let back = ck.to_params::<f32>().unwrap();
        assert_eq!(back.len(), params.len());
        for slot in 0..params.len() {
            assert_eq!(back.name(slot), params.name(slot));
            assert_eq!(back.value(slot).data(), params.value(slot).data());
        }
        assert_eq!(ck.epoch, 4);
        assert_eq!(ck.val_loss, 1.25);
    }

    #[test]
    fn wrong_fingerprint_is_rejected() {
        let cfg = tiny_config();
        let mut params = init_params::<f32>(&cfg, 9, 3).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, "fp-a", 0, 1.0);
        let err = ck.restore_into(&cfg, "fp-b", &mut params).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { .. }));
    }

    #[test]
    fn wrong_config_or_shape_is_rejected() {
        let cfg = tiny_config();
        let mut params = init_params::<f32>(&cfg, 9, 3).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, "fp", 0, 1.0);

        let mut other = cfg.clone();
        other.dec_hidden += 1;
        assert!(ck.verify_compatible(&other, "fp", &params).is_err());

        let mut tampered = ck.clone();
        tampered.params[0].1 = Tensor::zeros(alloc::vec![2, 2]);
        assert!(tampered.restore_into(&cfg, "fp", &mut params).is_err());
    }

    #[test]
    fn restore_overwrites_current_values() {
        let cfg = tiny_config();
        let a = init_params::<f32>(&cfg, 9, 3).unwrap();
        let mut b = init_params::<f32>(&cfg, 9, 4).unwrap();
        let ck = Checkpoint::from_params(&a, &cfg, "fp", 1, 0.5);
        ck.restore_into(&cfg, "fp", &mut b).unwrap();
        for slot in 0..a.len() {
            assert_eq!(a.value(slot).data(), b.value(slot).data());
        }
    }
}
