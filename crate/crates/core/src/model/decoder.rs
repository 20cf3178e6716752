use alloc::format;
use alloc::string::String;
use alloc::vec;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{Real, Tape, Tensor, Var};

use super::encoder::EncoderOutput;
use super::{lstm_step, matrix_param, AttentionMode, ModelConfig};

/// Decoder recurrence: the two deep-transition cells' states plus the most
/// recent attention context. Only (h_b, c_b) feed the next step; cell A's
/// pair is carried for inspection.
#[derive(Clone, Copy)]
pub struct DecoderState {
    pub h_a: Var,
    pub c_a: Var,
    pub h_b: Var,
    pub c_b: Var,
    pub context: Var,
}

/// General-attention read over the encoder states: `score_t = q W_a s_t`,
/// normalized per `cfg.attention_mode`. Masked positions get weight exactly
/// zero in both modes. Returns `(context, weights)`.
pub fn attention<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    cfg: &ModelConfig,
    query: Var,
    enc: &EncoderOutput,
) -> Result<(Var, Var)> {
    if !enc.mask.iter().any(|&m| m) {
        return Err(Error::BadArgument {
            op: "attention",
            msg: String::from("every encoder position is masked"),
        });
    }
    let w = matrix_param(tape, params, "dec.attn.w")?;
    let qa = tape.matmul(query, w)?;
    let keys = tape.transpose(enc.states)?;
    let scores = tape.matmul(qa, keys)?;
    let weights = match cfg.attention_mode {
        AttentionMode::Softmax => tape.masked_softmax_row(scores, &enc.mask)?,
        AttentionMode::Sigmoid => {
            let s = tape.sigmoid(scores);
            let gate: Tensor<F> = Tensor::row(
                enc.mask
                    .iter()
                    .map(|&m| if m { F::one() } else { F::zero() })
                    .collect(),
            );
            let gate = tape.constant(gate);
            tape.mul(s, gate)?
        }
    };
    let context = tape.matmul(weights, enc.states)?;
    Ok((context, weights))
}

/// Build the incoming state for step one: the masked time-mean of the
/// encoder states pushed through two separate tanh dense layers gives
/// (h, c) for cell B's slot; cell A's pair and the context start at zero.
pub fn init_decoder<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    cfg: &ModelConfig,
    enc: &EncoderOutput,
) -> Result<DecoderState> {
    let m = tape.masked_mean_rows(enc.states, &enc.mask)?;
    let wh = matrix_param(tape, params, "dec.init_h.w")?;
    let bh = params.bind(tape, "dec.init_h.b")?;
    let mh = tape.matmul(m, wh)?;
    let mh = tape.add_bias(mh, bh)?;
    let h = tape.tanh(mh);
    let wc = matrix_param(tape, params, "dec.init_c.w")?;
    let bc = params.bind(tape, "dec.init_c.b")?;
    let mc = tape.matmul(m, wc)?;
    let mc = tape.add_bias(mc, bc)?;
    let c = tape.tanh(mc);
    let zero_state = tape.constant(Tensor::zeros(vec![1, cfg.dec_hidden]));
    let zero_context = tape.constant(Tensor::zeros(vec![1, cfg.d_enc()]));
    Ok(DecoderState {
        h_a: zero_state,
        c_a: zero_state,
        h_b: h,
        c_b: c,
        context: zero_context,
    })
}

/// The deep output layer: `z = tanh(W_o [h; context; e] + b_o)`, scored
/// against a second character embedding matrix, giving `[1, vocab]` logits.
pub fn deep_output<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    h: Var,
    context: Var,
    e: Var,
) -> Result<Var> {
    let cat = tape.concat(1, &[h, context, e])?;
    let w = matrix_param(tape, params, "dec.out.w")?;
    let b = params.bind(tape, "dec.out.b")?;
    let zw = tape.matmul(cat, w)?;
    let zb = tape.add_bias(zw, b)?;
    let z = tape.tanh(zb);
    let out_embed = params.bind(tape, "dec.out_embed")?;
    let scorer = tape.transpose(out_embed)?;
    tape.matmul(z, scorer)
}

/// One decoder step. Cell A consumes the previous symbol's embedding with
/// the incoming (h_b, c_b); its fresh state queries attention; cell B
/// consumes the context with (h_a, c_a); the deep output layer scores the
/// vocabulary. Dropout applies to the non-recurrent inputs (embedding,
/// context, and the hidden state as seen by the output layer only).
#[allow(clippy::too_many_arguments)]
pub fn decoder_step<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    cfg: &ModelConfig,
    prev_id: u32,
    state: &DecoderState,
    enc: &EncoderOutput,
    train: bool,
    rng: &mut RngStream,
) -> Result<(Var, DecoderState)> {
    let table = params.bind(tape, "dec.embed")?;
    let vocab = tape.value(table).rows();
    if prev_id as usize >= vocab {
        return Err(Error::BadArgument {
            op: "decoder_step",
            msg: format!("symbol id {prev_id} outside vocabulary of {vocab}"),
        });
    }
    let p = cfg.dropout;
    let e = tape.embedding(table, &[prev_id as usize])?;
    let e = tape.dropout(e, p, train, rng)?;

    let wx_a = matrix_param(tape, params, "dec.a.wx")?;
    let wh_a = matrix_param(tape, params, "dec.a.wh")?;
    let b_a = params.bind(tape, "dec.a.b")?;
    let (h_a, c_a) = lstm_step(
        tape,
        wx_a,
        wh_a,
        b_a,
        e,
        state.h_b,
        state.c_b,
        cfg.dec_hidden,
    )?;

    let (context, _weights) = attention(tape, params, cfg, h_a, enc)?;
    let ctx = tape.dropout(context, p, train, rng)?;

    let wx_b = matrix_param(tape, params, "dec.b.wx")?;
    let wh_b = matrix_param(tape, params, "dec.b.wh")?;
    let b_b = params.bind(tape, "dec.b.b")?;
    let (h_b, c_b) = lstm_step(tape, wx_b, wh_b, b_b, ctx, h_a, c_a, cfg.dec_hidden)?;

    let h_out = tape.dropout(h_b, p, train, rng)?;
    let logits = deep_output(tape, params, h_out, ctx, e)?;
    Ok((
        logits,
        DecoderState {
            h_a,
            c_a,
            h_b,
            c_b,
            context,
        },
    ))
}

/// Log-probabilities for the next symbol: `log_softmax` over one step's
/// logits. Shared by training loss and search.
pub fn step_log_probs<F: Real>(tape: &mut Tape<F>, logits: Var) -> Result<Var> {
    tape.log_softmax(logits, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{encode, init_params, tiny_config};
    use crate::rng::RngStream;

    fn setup(seed: u64) -> (ModelConfig, Params<f64>, Tape<f64>, EncoderOutput) {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg, 9, seed).unwrap();
        let mut tape = Tape::new();
        let mut rng = RngStream::new(seed, "dec-test-features");
        let data: alloc::vec::Vec<f64> = (0..6 * 40).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let x = tape.constant(Tensor::new(vec![6, 40], data).unwrap());
        let mut drop_rng = RngStream::new(seed, "dec-test-dropout");
        let enc = encode(&mut tape, &params, &cfg, x, false, &mut drop_rng).unwrap();
        (cfg, params, tape, enc)
    }

    #[test]
    fn softmax_attention_weights_are_a_distribution() {
        let (cfg, params, mut tape, enc) = setup(1);
        let q =
            tape.constant(Tensor::new(vec![1, 6], vec![0.3, -0.2, 0.5, 0.0, 0.1, -0.4]).unwrap());
        let (context, weights) = attention(&mut tape, &params, &cfg, q, &enc).unwrap();
        let w = tape.value(weights);
        assert!(w.data().iter().all(|&x| x >= 0.0));
        let sum: f64 = w.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert_eq!(tape.value(context).shape(), &[1, cfg.d_enc()]);
    }

    #[test]
    fn single_position_gets_full_weight() {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg, 9, 2).unwrap();
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::new(vec![1, 8], vec![0.5; 8]).unwrap());
        let enc = EncoderOutput {
            states,
            mask: vec![true],
        };
        let q = tape.constant(Tensor::zeros(vec![1, cfg.dec_hidden]));
        let (context, weights) = attention(&mut tape, &params, &cfg, q, &enc).unwrap();
        assert_eq!(tape.value(weights).data(), &[1.0]);
        assert_eq!(tape.value(context).data(), tape.value(states).data());
    }

    #[test]
    fn identical_states_attract_uniform_weights() {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg, 9, 3).unwrap();
        let mut tape = Tape::new();
        let row: alloc::vec::Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let mut data = alloc::vec::Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let states = tape.constant(Tensor::new(vec![4, 8], data).unwrap());
        let enc = EncoderOutput {
            states,
            mask: vec![true; 4],
        };
        let q = tape.constant(Tensor::new(vec![1, 6], vec![0.2; 6]).unwrap());
        let (_, weights) = attention(&mut tape, &params, &cfg, q, &enc).unwrap();
        for &w in tape.value(weights).data() {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_positions_get_exact_zero_in_both_modes() {
        for mode in [AttentionMode::Softmax, AttentionMode::Sigmoid] {
            let mut cfg = tiny_config();
            cfg.attention_mode = mode;
            let params = init_params::<f64>(&cfg, 9, 4).unwrap();
            let mut tape = Tape::new();
            let states = tape.constant(Tensor::new(vec![3, 8], vec![0.3; 24]).unwrap());
            let enc = EncoderOutput {
                states,
                mask: vec![true, false, true],
            };
            let q = tape.constant(Tensor::new(vec![1, 6], vec![0.4; 6]).unwrap());
            let (_, weights) = attention(&mut tape, &params, &cfg, q, &enc).unwrap();
            assert_eq!(tape.value(weights).data()[1], 0.0);
        }
    }

    #[test]
    fn all_masked_attention_is_rejected() {
        let cfg = tiny_config();
        let params = init_params::<f64>(&cfg, 9, 4).unwrap();
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::new(vec![2, 8], vec![0.3; 16]).unwrap());
        let enc = EncoderOutput {
            states,
            mask: vec![false, false],
        };
        let q = tape.constant(Tensor::zeros(vec![1, 6]));
        assert!(attention(&mut tape, &params, &cfg, q, &enc).is_err());
    }

    #[test]
    fn init_state_is_tanh_bounded_and_mean_driven() {
        let (cfg, params, mut tape, _) = setup(5);
        // Constant encoder states: the masked mean must equal that constant.
        let states = tape.constant(Tensor::new(vec![3, 8], vec![0.7; 24]).unwrap());
        let enc = EncoderOutput {
            states,
            mask: vec![true; 3],
        };
        let st = init_decoder(&mut tape, &params, &cfg, &enc).unwrap();
        for &v in tape
            .value(st.h_b)
            .data()
            .iter()
            .chain(tape.value(st.c_b).data())
        {
            assert!(v > -1.0 && v < 1.0);
        }
        assert!(tape.value(st.context).data().iter().all(|&v| v == 0.0));

        // Perturbing a masked row must not change the init state.
        let mut altered = vec![0.7; 24];
        altered[8] = 9.0;
        let states2 = tape.constant(Tensor::new(vec![3, 8], altered).unwrap());
        let enc2 = EncoderOutput {
            states: states2,
            mask: vec![true, false, true],
        };
        let states3 = tape.constant(Tensor::new(vec![3, 8], vec![0.7; 24]).unwrap());
        let enc3 = EncoderOutput {
            states: states3,
            mask: vec![true, false, true],
        };
        let st2 = init_decoder(&mut tape, &params, &cfg, &enc2).unwrap();
        let st3 = init_decoder(&mut tape, &params, &cfg, &enc3).unwrap();
        assert_eq!(tape.value(st2.h_b).data(), tape.value(st3.h_b).data());
    }

    #[test]
    fn state_threads_through_steps() {
        let (cfg, params, mut tape, enc) = setup(6);
        let mut rng = RngStream::new(6, "dec-step");
        let st0 = init_decoder(&mut tape, &params, &cfg, &enc).unwrap();
        let (logits1, st1) =
            decoder_step(&mut tape, &params, &cfg, 1, &st0, &enc, false, &mut rng).unwrap();
        let (logits2, _) =
            decoder_step(&mut tape, &params, &cfg, 1, &st1, &enc, false, &mut rng).unwrap();
        assert_ne!(tape.value(logits1).data(), tape.value(logits2).data());
    }

    #[test]
    fn zero_parameters_give_uniform_logits() {
        let cfg = tiny_config();
        let mut params = init_params::<f64>(&cfg, 9, 7).unwrap();
        let zeroed: alloc::vec::Vec<alloc::string::String> = params
            .iter()
            .map(|(n, _)| alloc::string::String::from(n))
            .collect();
        for name in &zeroed {
            let slot = params.slot(name).unwrap();
            for v in params.value_mut(slot).data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let states = tape.constant(Tensor::new(vec![2, 8], vec![0.2; 16]).unwrap());
        let enc = EncoderOutput {
            states,
            mask: vec![true; 2],
        };
        let mut rng = RngStream::new(7, "dec-step");
        let st0 = init_decoder(&mut tape, &params, &cfg, &enc).unwrap();
        let (logits, _) =
            decoder_step(&mut tape, &params, &cfg, 2, &st0, &enc, false, &mut rng).unwrap();
        let d = tape.value(logits).data();
        assert!(d.iter().all(|&v| v == d[0]));
    }

    #[test]
    fn out_of_vocab_symbol_is_rejected() {
        let (cfg, params, mut tape, enc) = setup(8);
        let mut rng = RngStream::new(8, "dec-step");
        let st0 = init_decoder(&mut tape, &params, &cfg, &enc).unwrap();
        assert!(decoder_step(&mut tape, &params, &cfg, 9, &st0, &enc, false, &mut rng).is_err());
    }

    #[test]
    fn deep_output_scores_whole_vocabulary_within_tanh_range() {
        let (cfg, params, mut tape, enc) = setup(9);
        let mut rng = RngStream::new(9, "dec-step");
        let st0 = init_decoder(&mut tape, &params, &cfg, &enc).unwrap();
        let (logits, _) =
            decoder_step(&mut tape, &params, &cfg, 1, &st0, &enc, false, &mut rng).unwrap();
        assert_eq!(tape.value(logits).shape(), &[1, 9]);
        // |logit| <= sum of |out_embed| row entries since z is in (-1, 1).
        let out = params.get("dec.out_embed").unwrap();
        for (j, &l) in tape.value(logits).data().iter().enumerate() {
            let bound: f64 = out.row_slice(j).iter().map(|v| v.abs()).sum();
            assert!(l.abs() <= bound);
        }
    }
}
