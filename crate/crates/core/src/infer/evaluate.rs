use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::train::{evaluate_nll, Checkpoint};
use crate::vocab::CharVocab;

use super::{corpus_bleu, translate_corpus, DecodeConfig, EnsembleSpec};

/// Held-out quality of one checkpoint: teacher-forced negative
/// log-likelihood and decoded BLEU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dev_loss: f64,
    pub dev_bleu: f64,
}

/// Decode a held-out set with a single checkpoint and score it. The loss
/// is the same unsmoothed evaluation training uses, so the two agree on
/// identical data.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    dev_set: &[CorpusInstance],
    vocab: &CharVocab,
    dcfg: &DecodeConfig,
    batch_size: usize,
    seed: u64,
) -> Result<EvalReport> {
    if ck.vocab_fingerprint != vocab.fingerprint() {
        return Err(Error::VocabMismatch {
            expected: vocab.fingerprint(),
            found: ck.vocab_fingerprint.clone(),
        });
    }
    let params: Params<f32> = ck.to_params()?;
    let dev_loss = evaluate_nll(&params, &ck.config, vocab, dev_set, batch_size, seed)?;
    let ensemble = EnsembleSpec::new(vec![ck.clone()])?;
    let hyps = translate_corpus(&ensemble, dev_set, dcfg)?;
    let texts: Vec<String> = hyps.iter().map(|h| vocab.decode(&h.ids)).collect();
    let refs: Vec<String> = dev_set.iter().map(|i| i.translation.clone()).collect();
    let report = corpus_bleu(&texts, &refs)?;
    Ok(EvalReport {
        dev_loss,
        dev_bleu: report.bleu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy_instance;
    use crate::model::{init_params, tiny_config};

    #[test]
    fn evaluation_is_repeatable_and_consistent_with_training_loss() {
        let cfg = tiny_config();
        let vocab = CharVocab::build(["abc"]).unwrap();
        let params = init_params::<f32>(&cfg, vocab.size(), 5).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, &vocab.fingerprint(), 0, 1.0);
        let dev = vec![toy_instance("d0", 7, "ab"), toy_instance("d1", 9, "cba")];
        let dcfg = DecodeConfig {
            beam_size: 1,
            ..DecodeConfig::default()
        };
        let a = evaluate_checkpoint(&ck, &dev, &vocab, &dcfg, 4, 1).unwrap();
        let b = evaluate_checkpoint(&ck, &dev, &vocab, &dcfg, 4, 1).unwrap();
        assert_eq!(a, b);
        let direct = evaluate_nll(&params, &cfg, &vocab, &dev, 4, 1).unwrap();
        assert!((a.dev_loss - direct).abs() < 1e-6);
    }

    #[test]
    fn wrong_vocabulary_is_refused() {
        let cfg = tiny_config();
        let vocab = CharVocab::build(["abc"]).unwrap();
        let other = CharVocab::build(["xyz"]).unwrap();
        let params = init_params::<f32>(&cfg, vocab.size(), 5).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, &vocab.fingerprint(), 0, 1.0);
        let dev = vec![toy_instance("d0", 7, "xy")];
        let dcfg = DecodeConfig::default();
        assert!(matches!(
            evaluate_checkpoint(&ck, &dev, &other, &dcfg, 4, 1),
            Err(Error::VocabMismatch { .. })
        ));
    }
}
