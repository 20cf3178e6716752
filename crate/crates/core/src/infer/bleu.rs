use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corpus-level BLEU with its parts: the four modified n-gram precisions,
/// the brevity penalty, and the token counts they came from. `bleu` is on
/// the usual 0..100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> BTreeMap<Vec<&'a str>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Standard corpus BLEU over whitespace tokens: clipped n-gram matches for
/// n = 1..4 summed across the corpus, geometric mean of the precisions,
/// and the exp(1 - r/c) brevity penalty when the hypotheses run short. A
/// zero anywhere in the precisions zeroes the score.
pub fn corpus_bleu(hypotheses: &[String], references: &[String]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::BadArgument {
            op: "corpus_bleu",
            msg: format!(
                "{} hypotheses against {} references",
                hypotheses.len(),
                references.len()
            ),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, &count) in &hc {
                let clip = rc.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
                totals[n - 1] += count;
            }
        }
    }
    let mut precisions = [0.0f64; 4];
    for n in 0..4 {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if precisions.contains(&0.0) || hyp_len == 0 {
        0.0
    } else {
        let mean_log: f64 = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
