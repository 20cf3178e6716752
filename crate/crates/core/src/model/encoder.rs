use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{conv_out_len, Real, Tape, Var};

use super::{lstm_step, matrix_param, ModelConfig};

/// Encoder states for one utterance, one row per reduced time step.
pub struct EncoderOutput {
    /// `[t_prime, 2 * enc_hidden]`.
    pub states: Var,
    /// Valid positions; instances are encoded at exact length, so this is
    /// normally all true, but attention and the decoder init honor it.
    pub mask: Vec<bool>,
}

impl EncoderOutput {
    pub fn t_prime(&self) -> usize {
        self.mask.len()
    }
}

fn dense<F: Real>(tape: &mut Tape<F>, params: &Params<F>, name: &str, x: Var) -> Result<Var> {
    let w = matrix_param(tape, params, &format!("{name}.w"))?;
    let b = params.bind(tape, &format!("{name}.b"))?;
    let xw = tape.matmul(x, w)?;
    let pre = tape.add_bias(xw, b)?;
    Ok(tape.tanh(pre))
}

/// Run one LSTM direction over the rows of `seq`, returning the stacked
/// hidden states in time order. `reverse` walks the input back to front
/// (the returned rows still follow input order).
fn lstm_direction<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    base: &str,
    seq: Var,
    hidden: usize,
    reverse: bool,
) -> Result<Var> {
    let t_len = tape.value(seq).rows();
    let wx = matrix_param(tape, params, &format!("{base}.wx"))?;
    let wh = matrix_param(tape, params, &format!("{base}.wh"))?;
    let b = params.bind(tape, &format!("{base}.b"))?;
    let mut h = params.bind(tape, &format!("{base}.h0"))?;
    let mut c = params.bind(tape, &format!("{base}.c0"))?;
    let mut outputs: Vec<Var> = Vec::with_capacity(t_len);
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let x = tape.slice_rows(seq, t, 1)?;
        let (h2, c2) = lstm_step(tape, wx, wh, b, x, h, c, hidden)?;
        h = h2;
        c = c2;
        outputs.push(h);
    }
    if reverse {
        outputs.reverse();
    }
    tape.concat(0, &outputs)
}

/// Encode an utterance's feature matrix `[n, feat_dim]` into attention-ready
/// states `[t_prime, 2 * enc_hidden]` with `t_prime = ceil(ceil(n/2)/2)`.
///
/// The pipeline is: dropout on the input, two stride-2 convolutions with
/// bias and tanh, flattening channels into the feature axis, the two tanh
/// dense layers, then the stack of bidirectional LSTM layers with trained
/// initial states. Dropout follows every stage in train mode.
pub fn encode<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    cfg: &ModelConfig,
    features: Var,
    train: bool,
    rng: &mut RngStream,
) -> Result<EncoderOutput> {
    let shape = tape.value(features).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.feat_dim {
        return Err(Error::BadArgument {
            op: "encode",
            msg: format!("expected [n, {}] features, got {shape:?}", cfg.feat_dim),
        });
    }
    let n = shape[0];
    if n < 4 {
        return Err(Error::BadArgument {
            op: "encode",
            msg: format!("sequence of {n} frames is too short for the x4 temporal reduction"),
        });
    }
    let p = cfg.dropout;
    let x = tape.dropout(features, p, train, rng)?;
    let x = tape.reshape(x, vec![1, n, cfg.feat_dim])?;

    let k1 = params.bind(tape, "enc.conv1.kernel")?;
    let b1 = params.bind(tape, "enc.conv1.bias")?;
    let c1 = tape.conv2d_s2(x, k1, b1)?;
    let c1 = tape.tanh(c1);
    let c1 = tape.dropout(c1, p, train, rng)?;

    let k2 = params.bind(tape, "enc.conv2.kernel")?;
    let b2 = params.bind(tape, "enc.conv2.bias")?;
    let c2 = tape.conv2d_s2(c1, k2, b2)?;
    let c2 = tape.tanh(c2);
    let c2 = tape.dropout(c2, p, train, rng)?;

    let flat = tape.flatten_ctf(c2)?;
    let t_prime = conv_out_len(conv_out_len(n));
    debug_assert_eq!(tape.value(flat).shape(), &[t_prime, cfg.conv_flat_width()]);

    let d1 = dense(tape, params, "enc.dense1", flat)?;
    let d1 = tape.dropout(d1, p, train, rng)?;
    let d2 = dense(tape, params, "enc.dense2", d1)?;
    let mut seq = tape.dropout(d2, p, train, rng)?;

    for l in 0..cfg.enc_layers {
        let fwd = lstm_direction(
            tape,
            params,
            &format!("enc.l{l}.fwd"),
            seq,
            cfg.enc_hidden,
            false,
        )?;
        let bwd = lstm_direction(
            tape,
            params,
            &format!("enc.l{l}.bwd"),
            seq,
            cfg.enc_hidden,
            true,
        )?;
        let both = tape.concat(1, &[fwd, bwd])?;
        seq = tape.dropout(both, p, train, rng)?;
    }

    Ok(EncoderOutput {
        states: seq,
        mask: vec![true; t_prime],
    })
}
