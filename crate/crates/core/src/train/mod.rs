//! Training: label-smoothed teacher forcing, Adam or NAG updates under a
//! global gradient clip, plateau-halved learning rates, and convergence
//! detection on held-out loss. Each epoch ends in an in-memory checkpoint;
//! persisting them is the caller's business.

mod checkpoint;
mod loss;
mod optim;
mod schedule;

pub use checkpoint::Checkpoint;
pub use loss::{
    batch_loss, label_smoothed_xent, sequence_loss, smoothed_target_entropy, LossConfig,
};
pub use optim::{
    adam_step, clip_grad_norm, nag_step, AdamState, NagState, Optimizer, OptimizerConfig,
    OptimizerKind,
};
pub use schedule::{anneal_on_plateau, AnnealState, EarlyStopper};

use alloc::collections::BTreeSet;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::corpus::{make_batches, CorpusInstance};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{Real, Tape};
use crate::vocab::CharVocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Hard cap on epochs; convergence usually stops the run earlier.
    pub epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Halve the learning rate on every non-improving epoch.
    pub anneal: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 200,
            patience: 10,
            batch_size: 16,
            seed: 1,
            anneal: false,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub final_dev_loss: f64,
}

/// How fine-tuning continues from a checkpoint: the original policy at a
/// fixed rate, or a fresh optimizer with plateau annealing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinetuneMode {
    #[serde(rename = "same-policy")]
    SamePolicy,
    #[serde(rename = "adam-anneal")]
    AdamAnneal,
    #[serde(rename = "nag-anneal")]
    NagAnneal,
}

fn check_disjoint(train_set: &[CorpusInstance], dev_set: &[CorpusInstance]) -> Result<()> {
    let train_ids: BTreeSet<&str> = train_set.iter().map(|i| i.utt_id.as_str()).collect();
    for inst in dev_set {
        if train_ids.contains(inst.utt_id.as_str()) {
            return Err(Error::BadArgument {
                op: "train",
                msg: format!("utterance {} appears in both train and dev", inst.utt_id),
            });
        }
    }
    Ok(())
}

/// Mean per-position negative log-likelihood of a corpus under the current
/// parameters, dropout off, no smoothing.
pub fn evaluate_nll<F: Real>(
    params: &Params<F>,
    mcfg: &ModelConfig,
    vocab: &CharVocab,
    corpus: &[CorpusInstance],
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut order_rng = RngStream::new(seed, "eval/batches");
    let batches = make_batches(corpus, vocab, batch_size, &mut order_rng)?;
    let nll = LossConfig::nll();
    let mut sum = 0.0f64;
    let mut positions = 0usize;
    for batch in &batches {
        let mut tape = Tape::<F>::new();
        let mut rng = RngStream::new(seed, "eval/dropout");
        let (loss, count) = batch_loss(&mut tape, params, mcfg, &nll, batch, false, &mut rng)?;
        let value = tape.item(loss).to_f64().unwrap();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "dev loss",
            });
        }
        sum += value * count as f64;
        positions += count;
    }
    Ok(sum / positions as f64)
}

struct Policy {
    kind: OptimizerKind,
    anneal: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_training<F: Real>(
    params: &mut Params<F>,
    mcfg: &ModelConfig,
    vocab: &CharVocab,
    train_set: &[CorpusInstance],
    dev_set: &[CorpusInstance],
    opt_cfg: &OptimizerConfig,
    loss_cfg: &LossConfig,
    tcfg: &TrainingConfig,
    policy: Policy,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<TrainSummary> {
    opt_cfg.validate()?;
    loss_cfg.validate()?;
    check_disjoint(train_set, dev_set)?;
    let fingerprint = vocab.fingerprint();
    let mut optimizer = Optimizer::new(policy.kind, params);
    let mut anneal = AnnealState::new(opt_cfg.lr);
    let mut stopper = EarlyStopper::new(tcfg.patience);
    let mut summary = TrainSummary {
        epochs_run: 0,
        best_epoch: 0,
        best_dev_loss: f64::INFINITY,
        final_dev_loss: f64::INFINITY,
    };
    for epoch in 0..tcfg.epochs {
        let mut order_rng = RngStream::new(tcfg.seed, &format!("train/epoch{epoch}/batches"));
        let batches = make_batches(train_set, vocab, tcfg.batch_size, &mut order_rng)?;
        let mut drop_rng = RngStream::new(tcfg.seed, &format!("train/epoch{epoch}/dropout"));
        let mut loss_sum = 0.0f64;
        let mut positions = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } | Error::NonFiniteGrad { .. } => {
                    Error::TrainingDiverged { epoch, batch: bi }
                }
                other => other,
            };
            let mut tape = Tape::<F>::new();
            let (loss, count) = batch_loss(
                &mut tape,
                params,
                mcfg,
                loss_cfg,
                batch,
                true,
                &mut drop_rng,
            )
            .map_err(diverged)?;
            let value = tape.item(loss).to_f64().unwrap();
            if !value.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: bi });
            }
            tape.backward(loss)?;
            params.zero_grads();
            params.accumulate_from_tape(&tape);
            clip_grad_norm(params, opt_cfg.clip_norm);
            optimizer
                .step(params, opt_cfg, anneal.lr)
                .map_err(diverged)?;
            loss_sum += value * count as f64;
            positions += count;
        }
        let train_loss = loss_sum / positions as f64;
        let dev_loss = evaluate_nll(params, mcfg, vocab, dev_set, tcfg.batch_size, tcfg.seed)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            lr: anneal.lr,
        };
        let ck = Checkpoint::from_params(params, mcfg, &fingerprint, epoch, dev_loss);
        on_epoch(&record, &ck)?;
        summary.epochs_run = epoch + 1;
        summary.final_dev_loss = dev_loss;
        if dev_loss < summary.best_dev_loss {
            summary.best_dev_loss = dev_loss;
            summary.best_epoch = epoch;
        }
        let stop = stopper.should_stop(dev_loss);
        if policy.anneal {
            anneal_on_plateau(&mut anneal, dev_loss);
        }
        if stop {
            break;
        }
    }
    Ok(summary)
}

/// Train from the current parameters until the dev loss stops improving or
/// the epoch cap is hit. `on_epoch` sees every epoch's log record and
/// checkpoint in order.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Real>(
    params: &mut Params<F>,
    mcfg: &ModelConfig,
    vocab: &CharVocab,
    train_set: &[CorpusInstance],
    dev_set: &[CorpusInstance],
    opt_cfg: &OptimizerConfig,
    loss_cfg: &LossConfig,
    tcfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<TrainSummary> {
    run_training(
        params,
        mcfg,
        vocab,
        train_set,
        dev_set,
        opt_cfg,
        loss_cfg,
        tcfg,
        Policy {
            kind: opt_cfg.kind,
            anneal: tcfg.anneal,
        },
        on_epoch,
    )
}

/// Continue training from a checkpoint. The stored parameters are loaded
/// after config and vocabulary verification, optimizer state starts
/// fresh, and the mode picks the policy: `SamePolicy` keeps the configured
/// optimizer at its fixed base rate, the anneal modes run Adam or NAG
/// with plateau halving. Chains (pretrain, then clean1, then clean2)
/// are just repeated calls.
#[allow(clippy::too_many_arguments)]
pub fn finetune<F: Real>(
    ck: &Checkpoint,
    mcfg: &ModelConfig,
    vocab: &CharVocab,
    train_set: &[CorpusInstance],
    dev_set: &[CorpusInstance],
    opt_cfg: &OptimizerConfig,
    loss_cfg: &LossConfig,
    tcfg: &TrainingConfig,
    mode: FinetuneMode,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Checkpoint) -> Result<()>,
) -> Result<(Params<F>, TrainSummary)> {
    let mut params = crate::model::init_params::<F>(mcfg, vocab.size(), tcfg.seed)?;
    ck.restore_into(mcfg, &vocab.fingerprint(), &mut params)?;
    let policy = match mode {
        FinetuneMode::SamePolicy => Policy {
            kind: opt_cfg.kind,
            anneal: false,
        },
        FinetuneMode::AdamAnneal => Policy {
            kind: OptimizerKind::Adam,
            anneal: true,
        },
        FinetuneMode::NagAnneal => Policy {
            kind: OptimizerKind::Nag,
            anneal: true,
        },
    };
    let summary = run_training(
        &mut params,
        mcfg,
        vocab,
        train_set,
        dev_set,
        opt_cfg,
        loss_cfg,
        tcfg,
        policy,
        on_epoch,
    )?;
    Ok((params, summary))
}
