use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::Checkpoint;

/// The averaged model plus which members of the window went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedCheckpoint {
    pub checkpoint: Checkpoint,
    pub member_epochs: Vec<usize>,
    pub member_bleus: Vec<f64>,
}

fn check_member_compatible(first: &Checkpoint, other: &Checkpoint) -> Result<()> {
    if other.vocab_fingerprint != first.vocab_fingerprint {
        return Err(Error::VocabMismatch {
            expected: first.vocab_fingerprint.clone(),
            found: other.vocab_fingerprint.clone(),
        });
    }
    if other.config != first.config {
        return Err(Error::ParamMismatch {
            name: String::from("config"),
            msg: String::from("checkpoints come from different model configs"),
        });
    }
    if other.params.len() != first.params.len() {
        return Err(Error::ParamMismatch {
            name: String::from("params"),
            msg: format!(
                "{} tensors against {}",
                other.params.len(),
                first.params.len()
            ),
        });
    }
    for ((na, ta), (nb, tb)) in first.params.iter().zip(&other.params) {
        if na != nb || ta.shape() != tb.shape() {
            return Err(Error::ParamMismatch {
                name: na.clone(),
                msg: format!(
                    "expected {:?}, found {} with shape {:?}",
                    ta.shape(),
                    nb,
                    tb.shape()
                ),
            });
        }
    }
    Ok(())
}

/// Average the last `k` checkpoints of a series, keeping only those whose
/// validation BLEU sits strictly within `margin` of the window's best.
/// Element means are accumulated in f64 with summands sorted first, so the
/// result ignores member order and averaging copies of one checkpoint
/// reproduces it bit for bit.
pub fn average_checkpoints(
    series: &[Checkpoint],
    k: usize,
    margin: f64,
) -> Result<AveragedCheckpoint> {
    if series.is_empty() || k == 0 {
        return Err(Error::BadArgument {
            op: "average_checkpoints",
            msg: String::from("need at least one checkpoint and a nonzero window"),
        });
    }
    let window = &series[series.len().saturating_sub(k)..];
    let mut bleus = Vec::with_capacity(window.len());
    for ck in window {
        match ck.val_bleu {
            Some(b) => bleus.push(b),
            None => {
                return Err(Error::BadArgument {
                    op: "average_checkpoints",
                    msg: format!("checkpoint at epoch {} has no validation BLEU", ck.epoch),
                })
            }
        }
    }
    let best = bleus.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let selected: Vec<&Checkpoint> = window
        .iter()
        .zip(&bleus)
        .filter(|(_, &b)| best - b < margin)
        .map(|(ck, _)| ck)
        .collect();
    debug_assert!(!selected.is_empty());
    let first = selected[0];
    for other in &selected[1..] {
        check_member_compatible(first, other)?;
    }

    let n = selected.len() as f64;
    let mut params = Vec::with_capacity(first.params.len());
    let mut buf: Vec<f64> = Vec::new();
    for (pi, (name, proto)) in first.params.iter().enumerate() {
        let mut data = Vec::with_capacity(proto.numel());
        for ei in 0..proto.numel() {
            buf.clear();
            for member in &selected {
                buf.push(member.params[pi].1.data()[ei] as f64);
            }
            buf.sort_by(f64::total_cmp);
            let sum: f64 = buf.iter().sum();
            data.push((sum / n) as f32);
        }
        params.push((
            name.clone(),
            Tensor::new(proto.shape().to_vec(), data).expect("shape preserved"),
        ));
    }

    let member_epochs: Vec<usize> = selected.iter().map(|ck| ck.epoch).collect();
    let member_bleus: Vec<f64> = selected
        .iter()
        .map(|ck| ck.val_bleu.expect("checked above"))
        .collect();
    let val_loss = selected.iter().map(|ck| ck.val_loss).sum::<f64>() / n;
    let checkpoint = Checkpoint {
        config: first.config.clone(),
        vocab_fingerprint: first.vocab_fingerprint.clone(),
        epoch: selected.iter().map(|ck| ck.epoch).max().unwrap(),
        val_loss,
        val_bleu: None,
        params,
    };
    Ok(AveragedCheckpoint {
        checkpoint,
        member_epochs,
        member_bleus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, tiny_config};
    use alloc::vec;
    use alloc::vec::Vec;

    fn ck_with(seed: u64, epoch: usize, bleu: f64) -> Checkpoint {
        let cfg = tiny_config();
        let params = init_params::<f32>(&cfg, 9, seed).unwrap();
        let mut ck = Checkpoint::from_params(&params, &cfg, "fp", epoch, 1.0);
        ck.val_bleu = Some(bleu);
        ck
    }

    #[test]
    fn strict_margin_drops_the_straggler() {
        let series = vec![ck_with(1, 0, 10.0), ck_with(2, 1, 9.8), ck_with(3, 2, 9.4)];
        let avg = average_checkpoints(&series, 10, 0.5).unwrap();
        assert_eq!(avg.member_epochs, vec![0, 1]);
        assert_eq!(avg.member_bleus, vec![10.0, 9.8]);
    }

    #[test]
    fn boundary_margin_is_exclusive() {
        let series = vec![ck_with(1, 0, 10.0), ck_with(2, 1, 9.5)];
        let avg = average_checkpoints(&series, 10, 0.5).unwrap();
        assert_eq!(avg.member_epochs, vec![0]);
    }

    #[test]
    fn duplicates_average_to_themselves_bitwise() {
        let one = ck_with(7, 3, 12.0);
        let series = vec![one.clone(), one.clone(), one.clone()];
        let avg = average_checkpoints(&series, 10, 0.5).unwrap();
        for ((_, orig), (_, mean)) in one.params.iter().zip(&avg.checkpoint.params) {
            let a: Vec<u32> = orig.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = mean.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mean_of_two_is_exact() {
        let mut a = ck_with(1, 0, 10.0);
        let mut b = ck_with(2, 1, 10.0);
        a.params[0].1.data_mut()[0] = 1.0;
        b.params[0].1.data_mut()[0] = 3.0;
        let avg = average_checkpoints(&[a, b], 10, 0.5).unwrap();
        assert_eq!(avg.checkpoint.params[0].1.data()[0], 2.0);
    }

    #[test]
    fn member_order_does_not_change_the_result() {
        let a = ck_with(1, 0, 10.0);
        let b = ck_with(2, 1, 10.0);
        let c = ck_with(3, 2, 10.0);
        let fwd = average_checkpoints(&[a.clone(), b.clone(), c.clone()], 10, 0.5).unwrap();
        let rev = average_checkpoints(&[c, b, a], 10, 0.5).unwrap();
        for ((_, x), (_, y)) in fwd.checkpoint.params.iter().zip(&rev.checkpoint.params) {
            let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn window_limits_to_the_last_k() {
        let series = vec![
            ck_with(1, 0, 50.0),
            ck_with(2, 1, 10.0),
            ck_with(3, 2, 10.2),
        ];
        let avg = average_checkpoints(&series, 2, 0.5).unwrap();
        assert_eq!(avg.member_epochs, vec![1, 2]);
    }

    #[test]
    fn incompatible_members_are_named() {
        let a = ck_with(1, 0, 10.0);
        let mut b = ck_with(2, 1, 10.0);
        b.vocab_fingerprint = String::from("other");
        assert!(matches!(
            average_checkpoints(&[a, b], 10, 0.5),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn missing_bleu_is_rejected() {
        let cfg = tiny_config();
        let params = init_params::<f32>(&cfg, 9, 4).unwrap();
        let ck = Checkpoint::from_params(&params, &cfg, "fp", 0, 1.0);
        assert!(average_checkpoints(&[ck], 10, 0.5).is_err());
    }
}
