//! Decoding and evaluation: greedy or beam search over an ensemble of
//! checkpoints, checkpoint averaging, and corpus BLEU.

mod average;
mod bleu;
mod evaluate;

pub use average::{average_checkpoints, AveragedCheckpoint};
pub use bleu::{corpus_bleu, BleuReport};
pub use evaluate::{evaluate_checkpoint, EvalReport};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::error::{Error, Result};
use crate::model::{
    decoder_step, encode, init_decoder, step_log_probs, DecoderState, EncoderOutput, ModelConfig,
};
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{conv_out_len, Real, Tape, Tensor, Var};
use crate::train::Checkpoint;
use crate::vocab::EOS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// 1 is greedy search.
    pub beam_size: usize,
    /// Output budget per utterance: floor(ratio * T') + 10 symbols, T'
    /// being the frame count after the fourfold reduction.
    pub max_len_ratio: f64,
    /// Rank hypotheses by score divided by generated length.
    pub length_norm: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 4,
            max_len_ratio: 1.5,
            length_norm: false,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::BadArgument {
                op: "DecodeConfig",
                msg: String::from("beam_size must be at least 1"),
            });
        }
        if !(self.max_len_ratio > 0.0) {
            return Err(Error::BadArgument {
                op: "DecodeConfig",
                msg: format!("max_len_ratio must be positive, got {}", self.max_len_ratio),
            });
        }
        Ok(())
    }

    /// Symbol budget for an utterance of `n` feature frames.
    pub fn max_len(&self, n_frames: usize) -> usize {
        let t_prime = conv_out_len(conv_out_len(n_frames));
        (self.max_len_ratio * t_prime as f64) as usize + 10
    }
}

/// One decoded utterance: the id sequence including BOS (and EOS unless
/// the budget ran out first), its cumulative ensemble log-probability, and
/// whether it was cut off.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeHypothesis {
    pub ids: Vec<u32>,
    pub log_prob: f64,
    pub truncated: bool,
}

/// A set of checkpoints decoded jointly. Construction checks that every
/// member speaks the same vocabulary and has the same output geometry;
/// averaging distributions across different symbol sets is meaningless.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub checkpoints: Vec<Checkpoint>,
    pub vocab_fingerprint: String,
}

impl EnsembleSpec {
    pub fn new(checkpoints: Vec<Checkpoint>) -> Result<Self> {
        ensemble_compatibility(&checkpoints)?;
        let vocab_fingerprint = checkpoints[0].vocab_fingerprint.clone();
        Ok(EnsembleSpec {
            checkpoints,
            vocab_fingerprint,
        })
    }
}

fn vocab_rows(ck: &Checkpoint) -> Result<usize> {
    ck.params
        .iter()
        .find(|(name, _)| name == "dec.embed")
        .map(|(_, t)| t.rows())
        .ok_or_else(|| Error::ParamMismatch {
            name: String::from("dec.embed"),
            msg: String::from("checkpoint carries no embedding table"),
        })
}

/// Verify that checkpoints can act as one ensemble: identical vocabulary
/// fingerprints, vocabulary sizes, and model configs.
pub fn ensemble_compatibility(members: &[Checkpoint]) -> Result<()> {
    let first = members.first().ok_or(Error::BadArgument {
        op: "ensemble_compatibility",
        msg: String::from("ensemble needs at least one member"),
    })?;
    let rows = vocab_rows(first)?;
    for other in &members[1..] {
        if other.vocab_fingerprint != first.vocab_fingerprint {
            return Err(Error::VocabMismatch {
                expected: first.vocab_fingerprint.clone(),
                found: other.vocab_fingerprint.clone(),
            });
        }
        if vocab_rows(other)? != rows {
            return Err(Error::ParamMismatch {
                name: String::from("dec.embed"),
                msg: format!("vocabulary sizes {} and {}", rows, vocab_rows(other)?),
            });
        }
        if other.config != first.config {
            return Err(Error::ParamMismatch {
                name: String::from("config"),
                msg: String::from("ensemble members have different model configs"),
            });
        }
    }
    Ok(())
}

/// Per-member working set for one utterance: the tape the whole search
/// shares, the encoded input, and nothing else.
struct MemberRun<F: Real> {
    tape: Tape<F>,
    enc: EncoderOutput,
}

struct BeamItem {
    ids: Vec<u32>,
    score: f64,
    states: Vec<DecoderState>,
    done: bool,
}

impl BeamItem {
    fn generated(&self) -> usize {
        self.ids.len() - 1
    }
}

fn effective(score: f64, generated: usize, length_norm: bool) -> f64 {
    if length_norm && generated > 0 {
        score / generated as f64
    } else {
        score
    }
}

/// Mean over members of each member's log-softmax row for one step, plus
/// the successor states, for one hypothesis.
fn ensemble_step<F: Real>(
    members: &mut [MemberRun<F>],
    params: &[Params<F>],
    mcfg: &ModelConfig,
    prev: u32,
    states: &[DecoderState],
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<DecoderState>)> {
    let mut avg: Vec<f64> = Vec::new();
    let mut next_states = Vec::with_capacity(members.len());
    for (mi, member) in members.iter_mut().enumerate() {
        let (logits, next) = decoder_step(
            &mut member.tape,
            &params[mi],
            mcfg,
            prev,
            &states[mi],
            &member.enc,
            false,
            rng,
        )?;
        let lp: Var = step_log_probs(&mut member.tape, logits)?;
        let row = member.tape.value(lp);
        if avg.is_empty() {
            avg = vec![0.0; row.numel()];
        }
        for (a, &v) in avg.iter_mut().zip(row.data()) {
            *a += v.to_f64().unwrap();
        }
        next_states.push(next);
    }
    let n = members.len() as f64;
    for a in &mut avg {
        *a /= n;
    }
    Ok((avg, next_states))
}

enum Candidate {
    Finished(usize),
    Extend { parent: usize, token: u32, raw: f64 },
}

/// Decode one utterance with an ensemble. Each step averages the members'
/// log-softmax outputs, the beam keeps the `beam_size` best partial
/// hypotheses, and a hypothesis closes when it emits EOS. Ties rank the
/// smaller symbol id first, which pins the output order down completely.
pub fn greedy_or_beam_decode<F: Real>(
    member_params: &[Params<F>],
    mcfg: &ModelConfig,
    features: &Tensor<F>,
    cfg: &DecodeConfig,
) -> Result<DecodeHypothesis> {
    cfg.validate()?;
    if member_params.is_empty() {
        return Err(Error::BadArgument {
            op: "greedy_or_beam_decode",
            msg: String::from("ensemble needs at least one member"),
        });
    }
    let n_frames = features.rows();
    let max_len = cfg.max_len(n_frames);
    let mut rng = RngStream::new(0, "decode");
    let mut members: Vec<MemberRun<F>> = Vec::with_capacity(member_params.len());
    let mut init_states: Vec<DecoderState> = Vec::with_capacity(member_params.len());
    for params in member_params {
        let mut tape = Tape::<F>::new();
        let x = tape.constant(features.clone());
        let enc = encode(&mut tape, params, mcfg, x, false, &mut rng)?;
        let st = init_decoder(&mut tape, params, mcfg, &enc)?;
        members.push(MemberRun { tape, enc });
        init_states.push(st);
    }

    let mut beams = vec![BeamItem {
        ids: vec![crate::vocab::BOS],
        score: 0.0,
        states: init_states,
        done: false,
    }];

    for _ in 0..max_len {
        if beams.iter().all(|b| b.done) {
            break;
        }
        let mut candidates: Vec<(f64, u32, Candidate)> = Vec::new();
        let mut expansions: Vec<Option<Vec<DecoderState>>> = Vec::new();
        for (bi, beam) in beams.iter().enumerate() {
            if beam.done {
                candidates.push((
                    effective(beam.score, beam.generated(), cfg.length_norm),
                    0,
                    Candidate::Finished(bi),
                ));
                expansions.push(None);
                continue;
            }
            let prev = *beam.ids.last().unwrap();
            let (avg, next_states) = ensemble_step(
                &mut members,
                member_params,
                mcfg,
                prev,
                &beam.states,
                &mut rng,
            )?;
            for (token, &lp) in avg.iter().enumerate() {
                let raw = beam.score + lp;
                candidates.push((
                    effective(raw, beam.generated() + 1, cfg.length_norm),
                    token as u32,
                    Candidate::Extend {
                        parent: bi,
                        token: token as u32,
                        raw,
                    },
                ));
            }
            expansions.push(Some(next_states));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        candidates.truncate(cfg.beam_size);

        let old = core::mem::take(&mut beams);
        let mut carried: Vec<Option<BeamItem>> = old.into_iter().map(Some).collect();
        for (_, _, cand) in candidates {
            match cand {
                Candidate::Finished(bi) => {
                    beams.push(carried[bi].take().expect("finished beam taken twice"));
                }
                Candidate::Extend { parent, token, raw } => {
                    let src = carried[parent]
                        .as_ref()
                        .expect("parent still present for extension");
                    let mut ids = src.ids.clone();
                    ids.push(token);
                    beams.push(BeamItem {
                        ids,
                        score: raw,
                        states: expansions[parent].clone().expect("live beam expanded"),
                        done: token == EOS,
                    });
                }
            }
        }
    }

    let best = beams
        .into_iter()
        .max_by(|a, b| {
            effective(a.score, a.generated(), cfg.length_norm)
                .total_cmp(&effective(b.score, b.generated(), cfg.length_norm))
                .then_with(|| b.ids.cmp(&a.ids))
        })
        .expect("beam never empties");
    Ok(DecodeHypothesis {
        truncated: !best.done,
        log_prob: best.score,
        ids: best.ids,
    })
}

/// Decode every instance with the ensemble, in input order. Parameters are
/// materialized once, not per utterance.
pub fn translate_corpus(
    ensemble: &EnsembleSpec,
    instances: &[CorpusInstance],
    cfg: &DecodeConfig,
) -> Result<Vec<DecodeHypothesis>> {
    let member_params: Vec<Params<f32>> = ensemble
        .checkpoints
        .iter()
        .map(|ck| ck.to_params::<f32>())
        .collect::<Result<_>>()?;
    let mcfg = &ensemble.checkpoints[0].config;
    instances
        .iter()
        .map(|inst| greedy_or_beam_decode(&member_params, mcfg, &inst.features.frames, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy_instance;
    use crate::model::{init_params, tiny_config};
    use crate::vocab::{CharVocab, BOS};

    fn toy_checkpoint(seed: u64) -> (Checkpoint, ModelConfig, CharVocab) {
        let cfg = tiny_config();
        let vocab = CharVocab::build(["abcde"]).unwrap();
        let params = init_params::<f32>(&cfg, vocab.size(), seed).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, &vocab.fingerprint(), 0, 1.0);
        (ck, cfg, vocab)
    }

    #[test]
    fn ensemble_of_clones_equals_the_single_model() {
        let (ck, _cfg, _) = toy_checkpoint(3);
        let spec_one = EnsembleSpec::new(vec![ck.clone()]).unwrap();
        let spec_three = EnsembleSpec::new(vec![ck.clone(), ck.clone(), ck]).unwrap();
        let inst = toy_instance("u", 9, "ab");
        let dcfg = DecodeConfig {
            beam_size: 1,
            ..DecodeConfig::default()
        };
        let one = translate_corpus(&spec_one, core::slice::from_ref(&inst), &dcfg).unwrap();
        let three = translate_corpus(&spec_three, &[inst], &dcfg).unwrap();
        assert_eq!(one[0].ids, three[0].ids);
        assert!((one[0].log_prob - three[0].log_prob).abs() < 1e-6);
    }

    #[test]
    fn beam_one_matches_stepwise_argmax() {
        let (ck, cfg, _) = toy_checkpoint(4);
        let params = vec![ck.to_params::<f32>().unwrap()];
        let inst = toy_instance("u", 11, "ab");
        let dcfg = DecodeConfig {
            beam_size: 1,
            max_len_ratio: 1.5,
            length_norm: false,
        };
        let hyp = greedy_or_beam_decode(&params, &cfg, &inst.features.frames, &dcfg).unwrap();

        // Manual argmax rollout over the same model.
        let mut tape = Tape::<f32>::new();
        let mut rng = RngStream::new(0, "decode");
        let x = tape.constant(inst.features.frames.clone());
        let enc = encode(&mut tape, &params[0], &cfg, x, false, &mut rng).unwrap();
        let mut state = init_decoder(&mut tape, &params[0], &cfg, &enc).unwrap();
        let mut ids = vec![BOS];
        for _ in 0..dcfg.max_len(11) {
            let (logits, next) = decoder_step(
                &mut tape,
                &params[0],
                &cfg,
                *ids.last().unwrap(),
                &state,
                &enc,
                false,
                &mut rng,
            )
            .unwrap();
            let lp = step_log_probs(&mut tape, logits).unwrap();
            let row = tape.value(lp);
            let mut best = 0usize;
            for (k, &v) in row.data().iter().enumerate() {
                if v > row.data()[best] {
                    best = k;
                }
            }
            ids.push(best as u32);
            state = next;
            if best as u32 == EOS {
                break;
            }
        }
        assert_eq!(hyp.ids, ids);
    }

    #[test]
    fn budget_caps_the_output_and_flags_truncation() {
        let (ck, cfg, _) = toy_checkpoint(5);
        let params = vec![ck.to_params::<f32>().unwrap()];
        let inst = toy_instance("u", 8, "ab");
        let dcfg = DecodeConfig {
            beam_size: 2,
            max_len_ratio: 0.5,
            length_norm: false,
        };
        let hyp = greedy_or_beam_decode(&params, &cfg, &inst.features.frames, &dcfg).unwrap();
        let budget = dcfg.max_len(8);
        assert!(hyp.ids.len() - 1 <= budget);
        if hyp.truncated {
            assert_ne!(*hyp.ids.last().unwrap(), EOS);
        } else {
            assert_eq!(*hyp.ids.last().unwrap(), EOS);
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let (ck, cfg, _) = toy_checkpoint(6);
        let params = vec![ck.to_params::<f32>().unwrap()];
        let inst = toy_instance("u", 10, "ab");
        let dcfg = DecodeConfig::default();
        let a = greedy_or_beam_decode(&params, &cfg, &inst.features.frames, &dcfg).unwrap();
        let b = greedy_or_beam_decode(&params, &cfg, &inst.features.frames, &dcfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn foreign_fingerprints_cannot_form_an_ensemble() {
        let (a, _, _) = toy_checkpoint(7);
        let (mut b, _, _) = toy_checkpoint(8);
        b.vocab_fingerprint = String::from("different");
        assert!(matches!(
            EnsembleSpec::new(vec![a, b]),
            Err(Error::VocabMismatch { .. })
        ));
        assert!(EnsembleSpec::new(vec![]).is_err());
    }

    #[test]
    fn single_member_ensemble_is_fine() {
        let (ck, _, _) = toy_checkpoint(9);
        assert!(EnsembleSpec::new(vec![ck]).is_ok());
    }

    #[test]
    fn mismatched_vocab_sizes_are_rejected() {
        let (a, cfg, _) = toy_checkpoint(7);
        let bigger = CharVocab::build(["abcdefgh"]).unwrap();
        let params = init_params::<f32>(&cfg, bigger.size(), 7).unwrap();
        let mut b = Checkpoint::from_params(&params, &cfg, &a.vocab_fingerprint, 0, 1.0);
        b.vocab_fingerprint = a.vocab_fingerprint.clone();
        assert!(EnsembleSpec::new(vec![a, b]).is_err());
    }

    #[test]
    fn length_norm_prefers_longer_low_density_hypotheses() {
        // Pure ranking arithmetic: same raw score, different lengths.
        assert!(effective(-4.0, 8, true) > effective(-4.0, 2, true));
        assert_eq!(effective(-4.0, 8, false), effective(-4.0, 2, false));
    }
}
