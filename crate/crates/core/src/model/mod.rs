//! The translation model: a convolutional + bidirectional-LSTM encoder over
//! audio features and a two-cell deep-transition LSTM decoder with general
//! attention and a deep output layer.
//!
//! Parameters live in a [`Params`] registry; the functions here bind them
//! onto a tape and build the forward graph per instance at its exact
//! length, so padding can never leak into results.

mod decoder;
mod encoder;

pub use decoder::{
    attention, decoder_step, deep_output, init_decoder, step_log_probs, DecoderState,
};
pub use encoder::{encode, EncoderOutput};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::rng::RngStream;
use crate::tensor::{conv_out_len, real, Real, Tape, Tensor, Var};
use crate::vocab::RESERVED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub conv_channels: usize,
    pub dense1: usize,
    pub dense2: usize,
    /// Per-direction encoder LSTM size.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub char_emb_dim: usize,
    pub dec_hidden: usize,
    pub deep_output_dim: usize,
    pub attention_mode: AttentionMode,
    pub weight_norm: bool,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feat_dim: 40,
            conv_channels: 16,
            dense1: 256,
            dense2: 128,
            enc_hidden: 256,
            enc_layers: 3,
            char_emb_dim: 128,
            dec_hidden: 512,
            deep_output_dim: 512,
            attention_mode: AttentionMode::Softmax,
            weight_norm: false,
            dropout: 0.2,
        }
    }
}

impl ModelConfig {
    /// Encoder state width: both LSTM directions concatenated.
    pub fn d_enc(&self) -> usize {
        2 * self.enc_hidden
    }

    /// Feature width after the two stride-2 convolutions are flattened.
    pub fn conv_flat_width(&self) -> usize {
        self.conv_channels * conv_out_len(conv_out_len(self.feat_dim))
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.feat_dim,
            self.conv_channels,
            self.dense1,
            self.dense2,
            self.enc_hidden,
            self.enc_layers,
            self.char_emb_dim,
            self.dec_hidden,
            self.deep_output_dim,
        ];
        if extents.contains(&0) {
            return Err(Error::BadArgument {
                op: "model_config",
                msg: String::from("all sizes must be positive"),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadArgument {
                op: "model_config",
                msg: format!("dropout must be in [0, 1), got {}", self.dropout),
            });
        }
        Ok(())
    }
}

fn tensor_from_f64<F: Real>(shape: Vec<usize>, data: &[f64]) -> Tensor<F> {
    Tensor::new(shape, data.iter().map(|&v| real::<F>(v)).collect())
        .expect("init shapes are consistent")
}

fn glorot_draw(seed: u64, name: &str, numel: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let mut rng = RngStream::new(seed, &format!("init/{name}"));
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..numel).map(|_| rng.uniform(-limit, limit)).collect()
}

/// Register an `[in, out]` weight matrix. With weight normalization on, the
/// same initial values are stored as a direction matrix `name.v` of shape
/// `[out, in]` plus a per-row magnitude `name.g`, so the effective initial
/// weights are identical either way.
fn register_matrix<F: Real>(
    p: &mut Params<F>,
    seed: u64,
    weight_norm: bool,
    name: &str,
    in_dim: usize,
    out_dim: usize,
) -> Result<()> {
    let w0 = glorot_draw(seed, name, in_dim * out_dim, in_dim, out_dim);
    if weight_norm {
        let mut v = vec![0.0f64; out_dim * in_dim];
        for i in 0..in_dim {
            for j in 0..out_dim {
                v[j * in_dim + i] = w0[i * out_dim + j];
            }
        }
        let g: Vec<f64> = (0..out_dim)
            .map(|j| {
                v[j * in_dim..(j + 1) * in_dim]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        p.register(
            &format!("{name}.v"),
            tensor_from_f64(vec![out_dim, in_dim], &v),
        )?;
        p.register(&format!("{name}.g"), tensor_from_f64(vec![1, out_dim], &g))?;
    } else {
        p.register(name, tensor_from_f64(vec![in_dim, out_dim], &w0))?;
    }
    Ok(())
}

fn register_embedding<F: Real>(
    p: &mut Params<F>,
    seed: u64,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut rng = RngStream::new(seed, &format!("init/{name}"));
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-0.08, 0.08)).collect();
    p.register(name, tensor_from_f64(vec![rows, cols], &data))?;
    Ok(())
}

fn register_zeros<F: Real>(p: &mut Params<F>, name: &str, shape: Vec<usize>) -> Result<()> {
    p.register(name, Tensor::zeros(shape))?;
    Ok(())
}

/// Create and initialize every parameter of the model. Weight matrices draw
/// from per-name seeded streams; biases and the trainable LSTM initial
/// states start at zero.
pub fn init_params<F: Real>(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Params<F>> {
    cfg.validate()?;
    if vocab_size <= RESERVED {
        return Err(Error::BadArgument {
            op: "init_params",
            msg: format!("vocab size {vocab_size} leaves no real symbols"),
        });
    }
    let wn = cfg.weight_norm;
    let h = cfg.enc_hidden;
    let mut p = Params::new();

    let c = cfg.conv_channels;
    let k1 = glorot_draw(seed, "enc.conv1.kernel", c * 9, 9, c * 9);
    p.register("enc.conv1.kernel", tensor_from_f64(vec![c, 1, 3, 3], &k1))?;
    register_zeros(&mut p, "enc.conv1.bias", vec![c])?;
    let k2 = glorot_draw(seed, "enc.conv2.kernel", c * c * 9, c * 9, c * 9);
    p.register("enc.conv2.kernel", tensor_from_f64(vec![c, c, 3, 3], &k2))?;
    register_zeros(&mut p, "enc.conv2.bias", vec![c])?;

    register_matrix(
        &mut p,
        seed,
        wn,
        "enc.dense1.w",
        cfg.conv_flat_width(),
        cfg.dense1,
    )?;
    register_zeros(&mut p, "enc.dense1.b", vec![1, cfg.dense1])?;
    register_matrix(&mut p, seed, wn, "enc.dense2.w", cfg.dense1, cfg.dense2)?;
    register_zeros(&mut p, "enc.dense2.b", vec![1, cfg.dense2])?;

    for l in 0..cfg.enc_layers {
        let in_dim = if l == 0 { cfg.dense2 } else { cfg.d_enc() };
        for dir in ["fwd", "bwd"] {
            let base = format!("enc.l{l}.{dir}");
            register_matrix(&mut p, seed, wn, &format!("{base}.wx"), in_dim, 4 * h)?;
            register_matrix(&mut p, seed, wn, &format!("{base}.wh"), h, 4 * h)?;
            register_zeros(&mut p, &format!("{base}.b"), vec![1, 4 * h])?;
            register_zeros(&mut p, &format!("{base}.h0"), vec![1, h])?;
            register_zeros(&mut p, &format!("{base}.c0"), vec![1, h])?;
        }
    }

    let dh = cfg.dec_hidden;
    register_embedding(&mut p, seed, "dec.embed", vocab_size, cfg.char_emb_dim)?;
    register_matrix(&mut p, seed, wn, "dec.a.wx", cfg.char_emb_dim, 4 * dh)?;
    register_matrix(&mut p, seed, wn, "dec.a.wh", dh, 4 * dh)?;
    register_zeros(&mut p, "dec.a.b", vec![1, 4 * dh])?;
    register_matrix(&mut p, seed, wn, "dec.b.wx", cfg.d_enc(), 4 * dh)?;
    register_matrix(&mut p, seed, wn, "dec.b.wh", dh, 4 * dh)?;
    register_zeros(&mut p, "dec.b.b", vec![1, 4 * dh])?;
    register_matrix(&mut p, seed, wn, "dec.attn.w", dh, cfg.d_enc())?;
    register_matrix(&mut p, seed, wn, "dec.init_h.w", cfg.d_enc(), dh)?;
    register_zeros(&mut p, "dec.init_h.b", vec![1, dh])?;
    register_matrix(&mut p, seed, wn, "dec.init_c.w", cfg.d_enc(), dh)?;
    register_zeros(&mut p, "dec.init_c.b", vec![1, dh])?;
    register_matrix(
        &mut p,
        seed,
        wn,
        "dec.out.w",
        dh + cfg.d_enc() + cfg.char_emb_dim,
        cfg.deep_output_dim,
    )?;
    register_zeros(&mut p, "dec.out.b", vec![1, cfg.deep_output_dim])?;
    register_embedding(
        &mut p,
        seed,
        "dec.out_embed",
        vocab_size,
        cfg.deep_output_dim,
    )?;
    Ok(p)
}

/// Vocabulary size a parameter set was built for, read off the embedding.
pub fn vocab_size_of<F: Real>(params: &Params<F>) -> Result<usize> {
    params
        .get("dec.embed")
        .map(|t| t.rows())
        .ok_or_else(|| Error::ParamMismatch {
            name: String::from("dec.embed"),
            msg: String::from("not registered"),
        })
}

/// Bind the effective `[in, out]` form of a weight matrix, reconstructing
/// it from direction and magnitude when weight normalization is on.
pub(crate) fn matrix_param<F: Real>(
    tape: &mut Tape<F>,
    params: &Params<F>,
    name: &str,
) -> Result<Var> {
    if params.slot(name).is_some() {
        params.bind(tape, name)
    } else {
        let v = params.bind(tape, &format!("{name}.v"))?;
        let g = params.bind(tape, &format!("{name}.g"))?;
        let w = tape.weight_norm(v, g)?;
        tape.transpose(w)
    }
}

/// One LSTM cell update: gates in [input, forget, cell, output] order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_step<F: Real>(
    tape: &mut Tape<F>,
    wx: Var,
    wh: Var,
    b: Var,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let xg = tape.matmul(x, wx)?;
    let hg = tape.matmul(h, wh)?;
    let pre = tape.add(xg, hg)?;
    let gates = tape.add(pre, b)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let ct = tape.tanh(c_next);
    let h_next = tape.mul(o, ct)?;
    Ok((h_next, c_next))
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 40,
        conv_channels: 2,
        dense1: 8,
        dense2: 6,
        enc_hidden: 4,
        enc_layers: 2,
        char_emb_dim: 5,
        dec_hidden: 6,
        deep_output_dim: 7,
        attention_mode: AttentionMode::Softmax,
        weight_norm: false,
        dropout: 0.0,
    }
}
