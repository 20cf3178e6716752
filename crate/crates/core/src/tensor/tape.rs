use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::{real, Real, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct Node<F: Real> {
    value: Tensor<F>,
    requires_grad: bool,
    /// Slot in the caller's parameter registry, for parameter leaves.
    param_slot: Option<usize>,
    op: Op<F>,
}

enum Op<F: Real> {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    MatMul(Var, Var),
    Transpose(Var),
    Concat {
        axis: usize,
        parts: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    MaskedSoftmaxRow {
        x: Var,
        mask: Vec<bool>,
    },
    SumAll(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    MaskedMeanRows {
        x: Var,
        mask: Vec<bool>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    /// Inverted dropout; `factor` holds 0 or 1/(1-p) per element.
    Dropout {
        x: Var,
        factor: Vec<F>,
    },
    Conv2dS2 {
        x: Var,
        kernel: Var,
        bias: Var,
    },
    FlattenCtf(Var),
    WeightNorm {
        v: Var,
        g: Var,
        /// Per-row norms of `v`, saved from the forward pass.
        norms: Vec<F>,
    },
}

/// Records a computation so gradients can be pushed back through it.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    grads: Option<Vec<Vec<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, requires_grad: bool, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            param_slot: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value the gradient will not flow into.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// A differentiable leaf that is not tied to a parameter slot.
    pub fn leaf(&mut self, t: Tensor<F>) -> Var {
        self.push(t, true, Op::Leaf)
    }

    /// A differentiable leaf bound to slot `slot` of the caller's parameter
    /// registry. After `backward`, the gradient is read back per slot.
    pub fn param_leaf(&mut self, t: Tensor<F>, slot: usize) -> Var {
        let v = self.push(t, true, Op::Leaf);
        self.nodes[v.0].param_slot = Some(slot);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> F {
        self.nodes[v.0].value.item()
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let grads = self.grads.as_ref()?;
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: grads[v.0].clone(),
        })
    }

    /// Visit `(slot, grad)` for every parameter leaf after `backward`.
    pub fn visit_param_grads(&self, mut f: impl FnMut(usize, &[F])) {
        if let Some(grads) = self.grads.as_ref() {
            for (i, node) in self.nodes.iter().enumerate() {
                if let Some(slot) = node.param_slot {
                    f(slot, &grads[i]);
                }
            }
        }
    }

    fn check_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::BadArgument {
                op,
                msg: alloc::format!("expected a matrix, got shape {:?}", t.shape()),
            });
        }
        Ok((t.rows(), t.cols()))
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rq = self.requires(a) || self.requires(b);
        Ok(self.push(t, rq, Op::Add(a, b)))
    }

    /// `x + b` with `b` a `[1, c]` row broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.check_matrix("add_bias", x)?;
        let (br, bc) = self.check_matrix("add_bias", b)?;
        if br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: vec![r, c],
                rhs: vec![br, bc],
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(self.value(x).at2(i, j) + self.value(b).data()[j]);
            }
        }
        let t = Tensor {
            shape: vec![r, c],
            data,
        };
        let rq = self.requires(x) || self.requires(b);
        Ok(self.push(t, rq, Op::AddBias(x, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape.clone(),
            data,
        };
        let rq = self.requires(a) || self.requires(b);
        Ok(self.push(t, rq, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rq = self.requires(x);
        self.push(t, rq, Op::Scale(x, c))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_matrix("matmul", a)?;
        let (k2, n) = self.check_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor {
            shape: vec![m, n],
            data,
        };
        let rq = self.requires(a) || self.requires(b);
        Ok(self.push(t, rq, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.check_matrix("transpose", x)?;
        let mut data = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.value(x).at2(i, j);
            }
        }
        let t = Tensor {
            shape: vec![c, r],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::Transpose(x)))
    }

    // ---- structure ----

    /// Concatenate 2-D tensors along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::BadArgument {
                op: "concat",
                msg: alloc::format!("need parts on axis 0 or 1, got {} on {axis}", parts.len()),
            });
        }
        let (r0, c0) = self.check_matrix("concat", parts[0])?;
        let mut rows = r0;
        let mut cols = c0;
        for &p in &parts[1..] {
            let (r, c) = self.check_matrix("concat", p)?;
            if axis == 0 {
                if c != c0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                rows += r;
            } else {
                if r != r0 {
                    return Err(Error::ShapeMismatch {
                        op: "concat",
                        lhs: vec![r0, c0],
                        rhs: vec![r, c],
                    });
                }
                cols += c;
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
        } else {
            for i in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
        }
        let t = Tensor {
            shape: vec![rows, cols],
            data,
        };
        let rq = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            t,
            rq,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.check_matrix("slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(Error::BadArgument {
                op: "slice_cols",
                msg: alloc::format!("columns {start}..{} out of 0..{c}", start + len),
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            let row = self.value(x).row_slice(i);
            data.extend_from_slice(&row[start..start + len]);
        }
        let t = Tensor {
            shape: vec![r, len],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.check_matrix("slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(Error::BadArgument {
                op: "slice_rows",
                msg: alloc::format!("rows {start}..{} out of 0..{r}", start + len),
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor {
            shape: vec![len, c],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::SliceRows { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(x).numel() {
            return Err(Error::BadArgument {
                op: "reshape",
                msg: alloc::format!("cannot view {:?} as {shape:?}", self.value(x).shape()),
            });
        }
        let t = Tensor {
            shape,
            data: self.value(x).data().to_vec(),
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::Reshape(x)))
    }

    // ---- nonlinearities ----

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rq = self.requires(x);
        self.push(t, rq, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = F::one();
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| one / (one + (-v).exp()))
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rq = self.requires(x);
        self.push(t, rq, Op::Sigmoid(x))
    }

    fn softmax_like(&mut self, op: &'static str, x: Var, axis: usize) -> Result<(usize, usize)> {
        let (r, c) = self.check_matrix(op, x)?;
        if axis > 1 {
            return Err(Error::BadArgument {
                op,
                msg: alloc::format!("axis must be 0 or 1, got {axis}"),
            });
        }
        if !self.value(x).all_finite() {
            return Err(Error::NonFinite { context: op });
        }
        Ok((r, c))
    }

    /// Softmax along `axis` of a matrix, stabilized by the lane maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.softmax_like("softmax", x, axis)?;
        let mut data = vec![F::zero(); r * c];
        for_each_lane(r, c, axis, |lane| {
            let m = lane
                .iter()
                .map(|&(i, j)| self.value(x).at2(i, j))
                .fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for &(i, j) in lane {
                let e = (self.value(x).at2(i, j) - m).exp();
                data[i * c + j] = e;
                z = z + e;
            }
            for &(i, j) in lane {
                data[i * c + j] = data[i * c + j] / z;
            }
        });
        let t = Tensor {
            shape: vec![r, c],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.softmax_like("log_softmax", x, axis)?;
        let mut data = vec![F::zero(); r * c];
        for_each_lane(r, c, axis, |lane| {
            let m = lane
                .iter()
                .map(|&(i, j)| self.value(x).at2(i, j))
                .fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for &(i, j) in lane {
                z = z + (self.value(x).at2(i, j) - m).exp();
            }
            let lse = m + z.ln();
            for &(i, j) in lane {
                data[i * c + j] = self.value(x).at2(i, j) - lse;
            }
        });
        let t = Tensor {
            shape: vec![r, c],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::LogSoftmax { x, axis }))
    }

    /// Softmax over the unmasked entries of a `[1, t]` row; masked entries
    /// come out exactly zero.
    pub fn masked_softmax_row(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.check_matrix("masked_softmax_row", x)?;
        if r != 1 || mask.len() != c {
            return Err(Error::BadArgument {
                op: "masked_softmax_row",
                msg: alloc::format!(
                    "need a [1, {}] row for a {}-entry mask",
                    mask.len(),
                    mask.len()
                ),
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::BadArgument {
                op: "masked_softmax_row",
                msg: alloc::string::String::from("mask excludes every position"),
            });
        }
        if !self.value(x).all_finite() {
            return Err(Error::NonFinite {
                context: "masked_softmax_row",
            });
        }
        let xs = self.value(x).data();
        let m = xs
            .iter()
            .zip(mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .fold(F::neg_infinity(), F::max);
        let mut data = vec![F::zero(); c];
        let mut z = F::zero();
        for j in 0..c {
            if mask[j] {
                let e = (xs[j] - m).exp();
                data[j] = e;
                z = z + e;
            }
        }
        for (j, d) in data.iter_mut().enumerate() {
            if mask[j] {
                *d = *d / z;
            }
        }
        let t = Tensor {
            shape: vec![1, c],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(
            t,
            rq,
            Op::MaskedSoftmaxRow {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(F::zero(), |acc, &v| acc + v);
        let rq = self.requires(x);
        self.push(Tensor::scalar(s), rq, Op::SumAll(x))
    }

    /// Mean over `axis` of a matrix. Axis 0 gives `[1, c]`, axis 1 `[r, 1]`.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.check_matrix("mean_axis", x)?;
        if axis > 1 {
            return Err(Error::BadArgument {
                op: "mean_axis",
                msg: alloc::format!("axis must be 0 or 1, got {axis}"),
            });
        }
        let t = if axis == 0 {
            let inv = F::one() / real::<F>(r as f64);
            let mut data = vec![F::zero(); c];
            for i in 0..r {
                for (j, d) in data.iter_mut().enumerate() {
                    *d = *d + self.value(x).at2(i, j);
                }
            }
            for d in data.iter_mut() {
                *d = *d * inv;
            }
            Tensor {
                shape: vec![1, c],
                data,
            }
        } else {
            let inv = F::one() / real::<F>(c as f64);
            let mut data = vec![F::zero(); r];
            for (i, d) in data.iter_mut().enumerate() {
                for j in 0..c {
                    *d = *d + self.value(x).at2(i, j);
                }
                *d = *d * inv;
            }
            Tensor {
                shape: vec![r, 1],
                data,
            }
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::MeanAxis { x, axis }))
    }

    /// Mean over the unmasked rows of `x`, giving `[1, c]`.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.check_matrix("masked_mean_rows", x)?;
        if mask.len() != r {
            return Err(Error::BadArgument {
                op: "masked_mean_rows",
                msg: alloc::format!("mask has {} entries for {r} rows", mask.len()),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::BadArgument {
                op: "masked_mean_rows",
                msg: alloc::string::String::from("mask excludes every row"),
            });
        }
        let inv = F::one() / real::<F>(count as f64);
        let mut data = vec![F::zero(); c];
        for (i, &keep) in mask.iter().enumerate() {
            if keep {
                for (j, d) in data.iter_mut().enumerate() {
                    *d = *d + self.value(x).at2(i, j);
                }
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        let t = Tensor {
            shape: vec![1, c],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(
            t,
            rq,
            Op::MaskedMeanRows {
                x,
                mask: mask.to_vec(),
            },
        ))
    }

    // ---- lookup ----

    /// Gather rows `ids` of `table`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.check_matrix("embedding", table)?;
        if ids.is_empty() {
            return Err(Error::BadArgument {
                op: "embedding",
                msg: alloc::string::String::from("empty id list"),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::BadArgument {
                op: "embedding",
                msg: alloc::format!("id {bad} out of range for a {v}-row table"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(self.value(table).row_slice(id));
        }
        let t = Tensor {
            shape: vec![ids.len(), d],
            data,
        };
        let rq = self.requires(table);
        Ok(self.push(
            t,
            rq,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    // ---- regularization ----

    /// Inverted dropout. In eval mode or at `p == 0` this is the identity
    /// and returns `x` itself.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut RngStream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::BadArgument {
                op: "dropout",
                msg: alloc::format!("rate must be in [0, 1), got {p}"),
            });
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = real::<F>(1.0 / (1.0 - p));
        let factor: Vec<F> = (0..self.value(x).numel())
            .map(|_| {
                if rng.next_f64() < p {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(&factor)
            .map(|(&v, &f)| v * f)
            .collect();
        let t = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::Dropout { x, factor }))
    }

    // ---- convolution ----

    /// 3x3 convolution, stride 2, zero padding 1, plus a per-channel bias.
    /// Input `[c_in, h, w]`, kernel `[c_out, c_in, 3, 3]`, bias `[c_out]`.
    pub fn conv2d_s2(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::BadArgument {
                op: "conv2d_s2",
                msg: alloc::format!("input must be [c_in, h, w], got {xs:?}"),
            });
        }
        if ks.len() != 4 || ks[1] != xs[0] || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::ShapeMismatch {
                op: "conv2d_s2",
                lhs: xs,
                rhs: ks,
            });
        }
        if bs != [ks[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_s2",
                lhs: vec![ks[0]],
                rhs: bs,
            });
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let c_out = ks[0];
        let ho = super::conv_out_len(h);
        let wo = super::conv_out_len(w);
        let mut data = vec![F::zero(); c_out * ho * wo];
        for oc in 0..c_out {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = self.value(bias).data()[oc];
                    for ic in 0..c_in {
                        for kh in 0..3 {
                            let ih = (oh * 2 + kh) as isize - 1;
                            if ih < 0 || ih as usize >= h {
                                continue;
                            }
                            for kw in 0..3 {
                                let iw = (ow * 2 + kw) as isize - 1;
                                if iw < 0 || iw as usize >= w {
                                    continue;
                                }
                                let xv =
                                    self.value(x).data()[(ic * h + ih as usize) * w + iw as usize];
                                let kv =
                                    self.value(kernel).data()[((oc * c_in + ic) * 3 + kh) * 3 + kw];
                                acc = acc + xv * kv;
                            }
                        }
                    }
                    data[(oc * ho + oh) * wo + ow] = acc;
                }
            }
        }
        let t = Tensor {
            shape: vec![c_out, ho, wo],
            data,
        };
        let rq = self.requires(x) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(t, rq, Op::Conv2dS2 { x, kernel, bias }))
    }

    /// Reorder `[c, t, f]` into the matrix `[t, c * f]`, grouping each time
    /// step's channels together.
    pub fn flatten_ctf(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::BadArgument {
                op: "flatten_ctf",
                msg: alloc::format!("input must be [c, t, f], got {xs:?}"),
            });
        }
        let (c, tl, fl) = (xs[0], xs[1], xs[2]);
        let mut data = vec![F::zero(); c * tl * fl];
        for ci in 0..c {
            for ti in 0..tl {
                for fi in 0..fl {
                    data[ti * (c * fl) + ci * fl + fi] =
                        self.value(x).data()[(ci * tl + ti) * fl + fi];
                }
            }
        }
        let t = Tensor {
            shape: vec![tl, c * fl],
            data,
        };
        let rq = self.requires(x);
        Ok(self.push(t, rq, Op::FlattenCtf(x)))
    }

    // ---- weight normalization ----

    /// `w[i][j] = g[i] * v[i][j] / ||v[i]||` with `v` `[r, c]` and `g` `[1, r]`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (r, c) = self.check_matrix("weight_norm", v)?;
        let (gr, gc) = self.check_matrix("weight_norm", g)?;
        if gr != 1 || gc != r {
            return Err(Error::ShapeMismatch {
                op: "weight_norm",
                lhs: vec![r, c],
                rhs: vec![gr, gc],
            });
        }
        let mut norms = Vec::with_capacity(r);
        for i in 0..r {
            let mut s = F::zero();
            for j in 0..c {
                let vij = self.value(v).at2(i, j);
                s = s + vij * vij;
            }
            let n = s.sqrt();
            if n == F::zero() {
                return Err(Error::BadArgument {
                    op: "weight_norm",
                    msg: alloc::format!("direction row {i} has zero norm"),
                });
            }
            norms.push(n);
        }
        let mut data = Vec::with_capacity(r * c);
        for (i, norm) in norms.iter().enumerate() {
            let scale = self.value(g).data()[i] / *norm;
            for j in 0..c {
                data.push(self.value(v).at2(i, j) * scale);
            }
        }
        let t = Tensor {
            shape: vec![r, c],
            data,
        };
        let rq = self.requires(v) || self.requires(g);
        Ok(self.push(t, rq, Op::WeightNorm { v, g, norms }))
    }

    // ---- backward ----

    /// Push the gradient of the scalar `root` back through the tape. May be
    /// called once per tape; building further nodes after it is fine, they
    /// just carry no gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::BackwardAlreadyRun);
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::BadArgument {
                op: "backward",
                msg: alloc::format!(
                    "root must be scalar, got shape {:?}",
                    self.nodes[root.0].value.shape()
                ),
            });
        }
        let mut grads: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    vec![F::zero(); n.value.numel()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0][0] = F::one();
        }
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = core::mem::take(&mut grads[idx]);
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = g;
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[F], grads: &mut [Vec<F>]) {
        let add_into = |grads: &mut [Vec<F>], v: Var, contrib: &dyn Fn(&mut [F])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let mut slot = core::mem::take(&mut grads[v.0]);
            contrib(&mut slot);
            grads[v.0] = slot;
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_into(grads, *a, &|d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di = *di + gi;
                    }
                });
                add_into(grads, *b, &|d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di = *di + gi;
                    }
                });
            }
            Op::AddBias(x, b) => {
                let c = self.value(*b).cols();
                add_into(grads, *x, &|d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di = *di + gi;
                    }
                });
                add_into(grads, *b, &|d| {
                    for (k, &gi) in g.iter().enumerate() {
                        d[k % c] = d[k % c] + gi;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                add_into(grads, *a, &|d| {
                    for ((di, &gi), &bi) in d.iter_mut().zip(g).zip(bv) {
                        *di = *di + gi * bi;
                    }
                });
                add_into(grads, *b, &|d| {
                    for ((di, &gi), &ai) in d.iter_mut().zip(g).zip(av) {
                        *di = *di + gi * ai;
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                add_into(grads, *x, &|d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di = *di + gi * c;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                add_into(grads, *a, &|d| {
                    // dA += G B^T
                    for i in 0..m {
                        for p in 0..n {
                            let gip = g[i * n + p];
                            if gip == F::zero() {
                                continue;
                            }
                            for j in 0..k {
                                d[i * k + j] = d[i * k + j] + gip * bv[j * n + p];
                            }
                        }
                    }
                });
                add_into(grads, *b, &|d| {
                    // dB += A^T G
                    for i in 0..m {
                        for j in 0..k {
                            let aij = av[i * k + j];
                            if aij == F::zero() {
                                continue;
                            }
                            for p in 0..n {
                                d[j * n + p] = d[j * n + p] + aij * g[i * n + p];
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (c, r) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                add_into(grads, *x, &|d| {
                    for i in 0..c {
                        for j in 0..r {
                            d[j * c + i] = d[j * c + i] + g[i * r + j];
                        }
                    }
                });
            }
            Op::Concat { axis, parts } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        add_into(grads, p, &|d| {
                            for (di, &gi) in d.iter_mut().zip(&g[offset..offset + n]) {
                                *di = *di + gi;
                            }
                        });
                        offset += n;
                    }
                } else {
                    let rows = self.nodes[idx].value.rows();
                    let total = self.nodes[idx].value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        add_into(grads, p, &|d| {
                            for i in 0..rows {
                                for j in 0..c {
                                    d[i * c + j] = d[i * c + j] + g[i * total + offset + j];
                                }
                            }
                        });
                        offset += c;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.value(*x).cols();
                let (r, len) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                add_into(grads, *x, &|d| {
                    for i in 0..r {
                        for j in 0..len {
                            d[i * c + start + j] = d[i * c + start + j] + g[i * len + j];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = self.value(*x).cols();
                add_into(grads, *x, &|d| {
                    for (k, &gi) in g.iter().enumerate() {
                        d[start * c + k] = d[start * c + k] + gi;
                    }
                });
            }
            Op::Reshape(x) => {
                add_into(grads, *x, &|d| {
                    for (di, &gi) in d.iter_mut().zip(g) {
                        *di = *di + gi;
                    }
                });
            }
            Op::Tanh(x) => {
                let y = self.nodes[idx].value.data();
                add_into(grads, *x, &|d| {
                    for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *di = *di + gi * (F::one() - yi * yi);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[idx].value.data();
                add_into(grads, *x, &|d| {
                    for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *di = *di + gi * yi * (F::one() - yi);
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                let y = self.nodes[idx].value.data();
                let axis = *axis;
                add_into(grads, *x, &|d| {
                    for_each_lane(r, c, axis, |lane| {
                        let mut s = F::zero();
                        for &(i, j) in lane {
                            s = s + y[i * c + j] * g[i * c + j];
                        }
                        for &(i, j) in lane {
                            let k = i * c + j;
                            d[k] = d[k] + y[k] * (g[k] - s);
                        }
                    });
                });
            }
            Op::LogSoftmax { x, axis } => {
                let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                let y = self.nodes[idx].value.data();
                let axis = *axis;
                add_into(grads, *x, &|d| {
                    for_each_lane(r, c, axis, |lane| {
                        let mut s = F::zero();
                        for &(i, j) in lane {
                            s = s + g[i * c + j];
                        }
                        for &(i, j) in lane {
                            let k = i * c + j;
                            d[k] = d[k] + g[k] - y[k].exp() * s;
                        }
                    });
                });
            }
            Op::MaskedSoftmaxRow { x, mask } => {
                let y = self.nodes[idx].value.data();
                add_into(grads, *x, &|d| {
                    let mut s = F::zero();
                    for (j, &keep) in mask.iter().enumerate() {
                        if keep {
                            s = s + y[j] * g[j];
                        }
                    }
                    for (j, &keep) in mask.iter().enumerate() {
                        if keep {
                            d[j] = d[j] + y[j] * (g[j] - s);
                        }
                    }
                });
            }
            Op::SumAll(x) => {
                let g0 = g[0];
                add_into(grads, *x, &|d| {
                    for di in d.iter_mut() {
                        *di = *di + g0;
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                if *axis == 0 {
                    let inv = F::one() / real::<F>(r as f64);
                    add_into(grads, *x, &|d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] = d[i * c + j] + g[j] * inv;
                            }
                        }
                    });
                } else {
                    let inv = F::one() / real::<F>(c as f64);
                    add_into(grads, *x, &|d| {
                        for i in 0..r {
                            for j in 0..c {
                                d[i * c + j] = d[i * c + j] + g[i] * inv;
                            }
                        }
                    });
                }
            }
            Op::MaskedMeanRows { x, mask } => {
                let c = self.value(*x).cols();
                let count = mask.iter().filter(|&&m| m).count();
                let inv = F::one() / real::<F>(count as f64);
                add_into(grads, *x, &|d| {
                    for (i, &keep) in mask.iter().enumerate() {
                        if keep {
                            for j in 0..c {
                                d[i * c + j] = d[i * c + j] + g[j] * inv;
                            }
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d_cols = self.value(*table).cols();
                add_into(grads, *table, &|d| {
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d_cols {
                            d[id * d_cols + j] = d[id * d_cols + j] + g[row * d_cols + j];
                        }
                    }
                });
            }
            Op::Dropout { x, factor } => {
                add_into(grads, *x, &|d| {
                    for ((di, &gi), &fi) in d.iter_mut().zip(g).zip(factor) {
                        *di = *di + gi * fi;
                    }
                });
            }
            Op::Conv2dS2 { x, kernel, bias } => {
                let xs = self.value(*x).shape();
                let (c_in, h, w) = (xs[0], xs[1], xs[2]);
                let os = self.nodes[idx].value.shape();
                let (c_out, ho, wo) = (os[0], os[1], os[2]);
                let xv = self.value(*x).data();
                let kv = self.value(*kernel).data();
                add_into(grads, *x, &|d| {
                    for oc in 0..c_out {
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let gi = g[(oc * ho + oh) * wo + ow];
                                if gi == F::zero() {
                                    continue;
                                }
                                for ic in 0..c_in {
                                    for kh in 0..3 {
                                        let ih = (oh * 2 + kh) as isize - 1;
                                        if ih < 0 || ih as usize >= h {
                                            continue;
                                        }
                                        for kw in 0..3 {
                                            let iw = (ow * 2 + kw) as isize - 1;
                                            if iw < 0 || iw as usize >= w {
                                                continue;
                                            }
                                            let di = (ic * h + ih as usize) * w + iw as usize;
                                            let ki = ((oc * c_in + ic) * 3 + kh) * 3 + kw;
                                            d[di] = d[di] + gi * kv[ki];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                add_into(grads, *kernel, &|d| {
                    for oc in 0..c_out {
                        for oh in 0..ho {
                            for ow in 0..wo {
                                let gi = g[(oc * ho + oh) * wo + ow];
                                if gi == F::zero() {
                                    continue;
                                }
                                for ic in 0..c_in {
                                    for kh in 0..3 {
                                        let ih = (oh * 2 + kh) as isize - 1;
                                        if ih < 0 || ih as usize >= h {
                                            continue;
                                        }
                                        for kw in 0..3 {
                                            let iw = (ow * 2 + kw) as isize - 1;
                                            if iw < 0 || iw as usize >= w {
                                                continue;
                                            }
                                            let xi = (ic * h + ih as usize) * w + iw as usize;
                                            let ki = ((oc * c_in + ic) * 3 + kh) * 3 + kw;
                                            d[ki] = d[ki] + gi * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                add_into(grads, *bias, &|d| {
                    for oc in 0..c_out {
                        let mut s = F::zero();
                        for oh in 0..ho {
                            for ow in 0..wo {
                                s = s + g[(oc * ho + oh) * wo + ow];
                            }
                        }
                        d[oc] = d[oc] + s;
                    }
                });
            }
            Op::FlattenCtf(x) => {
                let xs = self.value(*x).shape();
                let (c, tl, fl) = (xs[0], xs[1], xs[2]);
                add_into(grads, *x, &|d| {
                    for ci in 0..c {
                        for ti in 0..tl {
                            for fi in 0..fl {
                                let di = (ci * tl + ti) * fl + fi;
                                d[di] = d[di] + g[ti * (c * fl) + ci * fl + fi];
                            }
                        }
                    }
                });
            }
            Op::WeightNorm { v, g: gv, norms } => {
                let (r, c) = (self.value(*v).rows(), self.value(*v).cols());
                let vv = self.value(*v).data();
                let gvv = self.value(*gv).data();
                add_into(grads, *gv, &|d| {
                    for i in 0..r {
                        let mut dot = F::zero();
                        for j in 0..c {
                            dot = dot + g[i * c + j] * vv[i * c + j];
                        }
                        d[i] = d[i] + dot / norms[i];
                    }
                });
                add_into(grads, *v, &|d| {
                    for i in 0..r {
                        let ni = norms[i];
                        let mut dot = F::zero();
                        for j in 0..c {
                            dot = dot + g[i * c + j] * vv[i * c + j];
                        }
                        let scale = gvv[i] / ni;
                        let corr = dot / (ni * ni);
                        for j in 0..c {
                            let k = i * c + j;
                            d[k] = d[k] + scale * (g[k] - corr * vv[k]);
                        }
                    }
                });
            }
        }
    }
}

/// Visit the index pairs of each lane of an `[r, c]` matrix. Axis 0 walks
/// down columns, axis 1 across rows.
fn for_each_lane(r: usize, c: usize, axis: usize, mut f: impl FnMut(&[(usize, usize)])) {
    let mut lane = Vec::new();
    if axis == 0 {
        for j in 0..c {
            lane.clear();
            lane.extend((0..r).map(|i| (i, j)));
            f(&lane);
        }
    } else {
        for i in 0..r {
            lane.clear();
            lane.extend((0..c).map(|j| (i, j)));
            f(&lane);
        }
    }
}

fn matmul_nn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..k {
            let aij = a[i * k + j];
            if aij == F::zero() {
                continue;
            }
            for p in 0..n {
                out[i * n + p] = out[i * n + p] + aij * b[j * n + p];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_matches_hand_product() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.leaf(t2(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let y = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t2(2, 3, &[0.0; 6]));
        let b = tape.leaf(t2(2, 2, &[0.0; 4]));
        assert!(matches!(
            tape.matmul(a, b),
            Err(Error::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_backward_is_orthogonal_to_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(2, 3, &[0.1, -0.4, 2.0, 1.0, 1.0, 1.0]));
        let y = tape.softmax(x, 1).unwrap();
        for i in 0..2 {
            let s: f64 = tape.value(y).row_slice(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Pick out one output element and check its input gradient sums to 0.
        let probe = tape.slice_cols(y, 2, 1).unwrap();
        let probe = tape.slice_rows(probe, 0, 1).unwrap();
        let root = tape.sum_all(probe);
        tape.backward(root).unwrap();
        let gx = tape.grad(x).unwrap();
        let s: f64 = gx.row_slice(0).iter().sum();
        assert!(s.abs() < 1e-12);
        assert!(gx.row_slice(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 2, &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax(x, 1), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions_exactly() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 4, &[0.3, 100.0, -0.2, 50.0]));
        let y = tape
            .masked_softmax_row(x, &[true, false, true, false])
            .unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[1], 0.0);
        assert_eq!(d[3], 0.0);
        assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_requires_a_valid_position() {
        let mut tape = Tape::new();
        let x = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        assert!(tape.masked_softmax_row(x, &[false, false]).is_err());
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0f64));
        let y = tape.tanh(x);
        let root = tape.sum_all(y);
        tape.backward(root).unwrap();
        assert!(matches!(
            tape.backward(root),
            Err(Error::BackwardAlreadyRun)
        ));
    }

    #[test]
    fn gradients_accumulate_across_shared_use() {
        // y = x * x via mul(x, x): dy/dx must be 2x, exercising accumulation.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0f64));
        let y = tape.mul(x, x).unwrap();
        let root = tape.sum_all(y);
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn conv_shape_follows_ceil_halving() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 100, 40]));
        let k = tape.leaf(Tensor::zeros(vec![16, 1, 3, 3]));
        let b = tape.leaf(Tensor::zeros(vec![16]));
        let y = tape.conv2d_s2(x, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[16, 50, 20]);

        let x7 = tape.leaf(Tensor::zeros(vec![16, 7, 40]));
        let k2 = tape.leaf(Tensor::zeros(vec![16, 16, 3, 3]));
        let y7 = tape.conv2d_s2(x7, k2, b).unwrap();
        assert_eq!(tape.value(y7).shape(), &[16, 4, 20]);
    }

    #[test]
    fn conv_center_tap_on_unit_input() {
        // Single 1 at position (0, 2, 2) of a 5x5 field; a kernel of ones
        // must see it from exactly the output cells whose 3x3 window covers
        // it. With stride 2 that is output (1, 1) only.
        let mut x = Tensor::zeros(vec![1, 5, 5]);
        x.data_mut()[2 * 5 + 2] = 1.0f64;
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let k = tape.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let b = tape.leaf(Tensor::zeros(vec![1]));
        let y = tape.conv2d_s2(xv, k, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3, 3]);
        for oh in 0..3 {
            for ow in 0..3 {
                let expect = if oh == 1 && ow == 1 { 1.0 } else { 0.0 };
                assert_eq!(tape.value(y).data()[oh * 3 + ow], expect);
            }
        }
    }

    #[test]
    fn flatten_ctf_groups_channels_per_step() {
        let mut tape = Tape::new();
        // [2, 2, 2]: channel-major input.
        let x = tape.leaf(
            Tensor::new(
                vec![2, 2, 2],
                vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            )
            .unwrap(),
        );
        let y = tape.flatten_ctf(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4]);
        assert_eq!(
            tape.value(y).data(),
            &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]
        );
    }

    #[test]
    fn weight_norm_rows_have_magnitude_g() {
        let mut tape = Tape::new();
        let v = tape.leaf(t2(2, 3, &[3.0, 0.0, 4.0, 1.0, 2.0, 2.0]));
        let g = tape.leaf(t2(1, 2, &[2.0, 6.0]));
        let w = tape.weight_norm(v, g).unwrap();
        let wv = tape.value(w);
        let n0: f64 = wv.row_slice(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1: f64 = wv.row_slice(1).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n0 - 2.0).abs() < 1e-12);
        assert!((n1 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn weight_norm_rejects_zero_row() {
        let mut tape = Tape::new();
        let v = tape.leaf(t2(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        let g = tape.leaf(t2(1, 2, &[1.0, 1.0]));
        assert!(tape.weight_norm(v, g).is_err());
    }

    #[test]
    fn dropout_eval_is_identity_var() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(7, "dropout-test");
        let x = tape.leaf(t2(1, 4, &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
        let z = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(x, z);
    }

    #[test]
    fn dropout_keep_rate_is_close_to_nominal() {
        let mut tape = Tape::new();
        let mut rng = RngStream::new(7, "dropout-mass");
        let n = 100_000;
        let x = tape.leaf(Tensor::new(vec![1, n], vec![1.0f64; n]).unwrap());
        let y = tape.dropout(x, 0.2, true, &mut rng).unwrap();
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / n as f64;
        assert!((frac - 0.8).abs() < 0.01, "kept fraction {frac}");
        // Survivors are scaled by 1/(1-p).
        let max = tape.value(y).data().iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.25).abs() < 1e-12);
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut tape = Tape::new();
        let table = tape.leaf(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let e = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let root = tape.sum_all(e);
        tape.backward(root).unwrap();
        let g = tape.grad(table).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range_id() {
        let mut tape = Tape::new();
        let table = tape.leaf(t2(3, 2, &[0.0; 6]));
        assert!(tape.embedding(table, &[3]).is_err());
    }

    #[test]
    fn concat_axis1_roundtrips_through_slices() {
        let mut tape = Tape::new();
        let a = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t2(2, 1, &[9.0, 8.0]));
        let y = tape.concat(1, &[a, b]).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let back = tape.slice_cols(y, 0, 2).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(a).data());
    }
}
