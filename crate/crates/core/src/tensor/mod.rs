//! Dense tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain value: a shape plus row-major data. All
//! differentiable computation happens on a [`Tape`]: ops append nodes and
//! return [`Var`] handles, `backward` walks the nodes in reverse and fills
//! gradients. The op set is exactly what the translation model needs, no
//! more.
//!
//! Storage is 32-bit in every artifact the system produces; the engine is
//! generic over [`Real`] so the same graph can be replayed in `f64` when a
//! tighter gradient check is wanted.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_diff_grad, max_rel_err};
pub use tape::{Tape, Var};

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{Debug, Display};
use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element of a tensor. Implemented by `f32` and `f64`.
pub trait Real: Float + Debug + Display + Default + Send + Sync + 'static {}

impl<T> Real for T where T: Float + Debug + Display + Default + Send + Sync + 'static {}

/// Shorthand for converting literal constants.
pub fn real<F: Real>(x: f64) -> F {
    F::from(x).expect("constant representable in the element type")
}

/// A dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    /// Build a tensor, checking that the extents are positive and match the
    /// data length.
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::BadArgument {
                op: "tensor",
                msg: alloc::format!("extents must be positive, got {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadArgument {
                op: "tensor",
                msg: alloc::format!(
                    "shape {shape:?} implies {numel} elements, data has {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        assert!(!shape.is_empty() && shape.iter().all(|&e| e > 0));
        Tensor {
            shape,
            data: vec![F::zero(); numel],
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// A row vector of shape `[1, n]`.
    pub fn row(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn at2(&self, i: usize, j: usize) -> F {
        debug_assert!(self.is_matrix());
        self.data[i * self.shape[1] + j]
    }

    /// Row `i` of a 2-D tensor as a slice.
    pub fn row_slice(&self, i: usize) -> &[F] {
        debug_assert!(self.is_matrix());
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> F {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Convert elements to another precision.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| G::from(*v).expect("element convertible"))
                .collect(),
        }
    }
}

/// Output length of one stride-2, kernel-3, padding-1 convolution.
pub fn conv_out_len(n: usize) -> usize {
    // floor((n + 2*1 - 3) / 2) + 1 == ceil(n / 2)
    (n - 1) / 2 + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let r = Tensor::new(vec![2, 3], vec![0.0f32; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn new_rejects_zero_extent() {
        let r = Tensor::<f32>::new(vec![2, 0], vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn conv_len_is_ceil_halving() {
        for n in 1..200 {
            assert_eq!(conv_out_len(n), n.div_ceil(2));
        }
    }
}
