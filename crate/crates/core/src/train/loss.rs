use alloc::format;
use alloc::vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::model::{decoder_step, encode, init_decoder, ModelConfig};
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{real, Real, Tape, Tensor, Var};
use crate::vocab::PAD;

/// Label smoothing splits the target mass 0.9 / 0.1, the smoothed share
/// spread uniformly over the other symbols. With `label_smoothing` off the
/// loss is plain negative log-likelihood, which is also what dev
/// evaluation uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub label_smoothing: bool,
    pub correct_mass: f64,
    pub smooth_mass: f64,
    pub pad_excluded: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            label_smoothing: true,
            correct_mass: 0.9,
            smooth_mass: 0.1,
            pad_excluded: true,
        }
    }
}

impl LossConfig {
    /// Plain negative log-likelihood, used for dev-set evaluation.
    pub fn nll() -> Self {
        LossConfig {
            label_smoothing: false,
            correct_mass: 1.0,
            smooth_mass: 0.0,
            pad_excluded: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (cm, sm) = self.masses();
        if !(0.0..=1.0).contains(&cm) || !(0.0..=1.0).contains(&sm) || (cm + sm - 1.0).abs() > 1e-12
        {
            return Err(Error::BadArgument {
                op: "LossConfig",
                msg: format!("masses {cm} + {sm} must be in [0, 1] and sum to 1"),
            });
        }
        Ok(())
    }

    /// Effective (correct, smooth) masses after the on/off switch.
    fn masses(&self) -> (f64, f64) {
        if self.label_smoothing {
            (self.correct_mass, self.smooth_mass)
        } else {
            (1.0, 0.0)
        }
    }
}

/// Cross-entropy of one step's logits against the smoothed target
/// distribution: `q(target) = correct_mass`, every other symbol sharing
/// `smooth_mass / (V - 1)`. Returns a scalar variable on the tape.
pub fn label_smoothed_xent<F: Real>(
    tape: &mut Tape<F>,
    logits: Var,
    target: u32,
    cfg: &LossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let (rows, v) = {
        let t = tape.value(logits);
        if !t.is_matrix() || t.rows() != 1 {
            return Err(Error::BadArgument {
                op: "label_smoothed_xent",
                msg: format!("logits must be [1, V], got {:?}", t.shape()),
            });
        }
        (t.rows(), t.cols())
    };
    debug_assert_eq!(rows, 1);
    if v < 2 {
        return Err(Error::BadArgument {
            op: "label_smoothed_xent",
            msg: format!("vocabulary of {v} symbols cannot be smoothed"),
        });
    }
    if target as usize >= v {
        return Err(Error::BadArgument {
            op: "label_smoothed_xent",
            msg: format!("target {target} outside vocabulary of {v}"),
        });
    }
    let (cm, sm) = cfg.masses();
    let lsm = tape.log_softmax(logits, 1)?;
    let lt = tape.slice_cols(lsm, target as usize, 1)?;
    let lt = tape.reshape(lt, vec![1])?;
    if sm == 0.0 {
        return Ok(tape.scale(lt, real::<F>(-1.0)));
    }
    let share = sm / (v as f64 - 1.0);
    let total = tape.sum_all(lsm);
    let a = tape.scale(lt, real::<F>(-(cm - share)));
    let b = tape.scale(total, real::<F>(-share));
    tape.add(a, b)
}

/// Teacher-forced loss over one utterance: encode the features, then walk
/// the target ids feeding each gold symbol to the next step. Returns the
/// unnormalized sum of per-position losses and the number of positions
/// counted; positions whose target is PAD contribute nothing to either.
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    mcfg: &ModelConfig,
    lcfg: &LossConfig,
    features: Var,
    target_ids: &[u32],
    train: bool,
    rng: &mut RngStream,
) -> Result<(Var, usize)> {
    if target_ids.len() < 2 {
        return Err(Error::BadArgument {
            op: "sequence_loss",
            msg: format!("need at least [BOS, EOS], got {} ids", target_ids.len()),
        });
    }
    let enc = encode(tape, params, mcfg, features, train, rng)?;
    let mut state = init_decoder(tape, params, mcfg, &enc)?;
    let mut sum: Option<Var> = None;
    let mut count = 0usize;
    for t in 0..target_ids.len() - 1 {
        let (logits, next) =
            decoder_step(tape, params, mcfg, target_ids[t], &state, &enc, train, rng)?;
        state = next;
        let target = target_ids[t + 1];
        if lcfg.pad_excluded && target == PAD {
            continue;
        }
        let term = label_smoothed_xent(tape, logits, target, lcfg)?;
        sum = Some(match sum {
            Some(s) => tape.add(s, term)?,
            None => term,
        });
        count += 1;
    }
    let sum = sum.ok_or(Error::BadArgument {
        op: "sequence_loss",
        msg: format!("no non-pad positions in {target_ids:?}"),
    })?;
    Ok((sum, count))
}

/// Mean per-position loss over a batch: the per-utterance sums divided by
/// the total number of counted positions.
pub fn batch_loss<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    mcfg: &ModelConfig,
    lcfg: &LossConfig,
    batch: &Batch,
    train: bool,
    rng: &mut RngStream,
) -> Result<(Var, usize)> {
    let mut sum: Option<Var> = None;
    let mut count = 0usize;
    for i in 0..batch.size() {
        let feats: Tensor<F> = batch.feature_matrix(i).cast();
        let x = tape.constant(feats);
        let (s, c) = sequence_loss(tape, params, mcfg, lcfg, x, batch.target_ids(i), train, rng)?;
        sum = Some(match sum {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
        count += c;
    }
    let sum = sum.ok_or(Error::EmptyCorpus)?;
    let loss = tape.scale(sum, real::<F>(1.0 / count as f64));
    Ok((loss, count))
}

/// Entropy of the smoothed target distribution, the floor the loss can
/// reach. Useful for sanity checks.
pub fn smoothed_target_entropy(cfg: &LossConfig, v: usize) -> f64 {
    let (cm, sm) = cfg.masses();
    if sm == 0.0 {
        return 0.0;
    }
    let share = sm / (v as f64 - 1.0);
    -(cm * cm.ln() + sm * share.ln())
}
