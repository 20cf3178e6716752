//! Named trainable parameters with gradient accumulators.
//!
//! Slots are assigned in registration order, which fixes the iteration
//! order everywhere (optimizer updates, checkpoints, norms) and keeps runs
//! deterministic. Gradients accumulate across tapes until `zero_grads`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F: Real> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    index: BTreeMap<String, usize>,
}

impl<F: Real> Default for Params<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Params<F> {
    pub fn new() -> Self {
        Params {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<F>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::ParamMismatch {
                name: name.to_string(),
                msg: String::from("registered twice"),
            });
        }
        let slot = self.values.len();
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape().to_vec()));
        self.values.push(value);
        self.index.insert(name.to_string(), slot);
        Ok(slot)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn value(&self, slot: usize) -> &Tensor<F> {
        &self.values[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor<F> {
        &mut self.values[slot]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.slot(name).map(|s| &self.values[s])
    }

    pub fn grad(&self, slot: usize) -> &Tensor<F> {
        &self.grads[slot]
    }

    pub fn grad_by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.slot(name).map(|s| &self.grads[s])
    }

    /// Visit `(name, value)` in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    /// Put the current value of `name` on a tape as a differentiable
    /// parameter leaf.
    pub fn bind(&self, tape: &mut Tape<F>, name: &str) -> Result<Var> {
        let slot = self.slot(name).ok_or_else(|| Error::ParamMismatch {
            name: name.to_string(),
            msg: String::from("not registered"),
        })?;
        Ok(tape.param_leaf(self.values[slot].clone(), slot))
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = F::zero();
            }
        }
    }

    /// Add the tape's parameter gradients (after its `backward`) into the
    /// accumulators.
    pub fn accumulate_from_tape(&mut self, tape: &Tape<F>) {
        tape.visit_param_grads(|slot, g| {
            for (acc, &gi) in self.grads[slot].data_mut().iter_mut().zip(g) {
                *acc = *acc + gi;
            }
        });
    }

    /// Scale all gradient accumulators in place.
    pub fn scale_grads(&mut self, factor: F) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = *v * factor;
            }
        }
    }

    /// Global L2 norm over all gradients, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0f64;
        for g in &self.grads {
            for v in g.data() {
                let v = v.to_f64().unwrap();
                sq += v * v;
            }
        }
        sq.sqrt()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            grads: self.grads.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = Params::<f32>::new();
        p.register("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(p.register("w", Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn gradients_accumulate_across_tapes_until_zeroed() {
        let mut p = Params::<f64>::new();
        p.register("x", Tensor::scalar(3.0)).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = p.bind(&mut tape, "x").unwrap();
            let y = tape.mul(x, x).unwrap();
            let root = tape.sum_all(y);
            tape.backward(root).unwrap();
            p.accumulate_from_tape(&tape);
        }
        // d(x^2)/dx = 6 per tape, accumulated twice.
        assert_eq!(p.grad_by_name("x").unwrap().item(), 12.0);
        p.zero_grads();
        assert_eq!(p.grad_by_name("x").unwrap().item(), 0.0);
    }

    #[test]
    fn grad_norm_is_global_l2() {
        let mut p = Params::<f32>::new();
        p.register("a", Tensor::zeros(vec![2])).unwrap();
        p.register("b", Tensor::zeros(vec![1])).unwrap();
        let mut tape = Tape::new();
        let a = p.bind(&mut tape, "a").unwrap();
        let b = p.bind(&mut tape, "b").unwrap();
        let sa = tape.sum_all(a);
        let sb = tape.sum_all(b);
        let sb3 = tape.scale(sb, 2.0);
        let root = tape.add(sa, sb3).unwrap();
        tape.backward(root).unwrap();
        p.accumulate_from_tape(&tape);
        // grads: a = [1, 1], b = [2] -> norm sqrt(6).
        assert!((p.grad_norm() - 6.0f64.sqrt()).abs() < 1e-7);
    }
}
