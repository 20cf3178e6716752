use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{real, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Nag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.99,
            clip_norm: 5.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::BadArgument {
                op: "OptimizerConfig",
                msg: format!("lr must be positive, got {}", self.lr),
            });
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::BadArgument {
                    op: "OptimizerConfig",
                    msg: format!("{name} must be in [0, 1), got {b}"),
                });
            }
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter, plus the step count
/// driving bias correction.
pub struct AdamState<F: Real> {
    t: u64,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &Params<F>) -> Self {
        let zeros: Vec<Tensor<F>> = (0..params.len())
            .map(|s| Tensor::zeros(params.value(s).shape().to_vec()))
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Per-parameter velocity for Nesterov momentum.
pub struct NagState<F: Real> {
    v: Vec<Tensor<F>>,
}

impl<F: Real> NagState<F> {
    pub fn new(params: &Params<F>) -> Self {
        NagState {
            v: (0..params.len())
                .map(|s| Tensor::zeros(params.value(s).shape().to_vec()))
                .collect(),
        }
    }
}

fn check_grads_finite<F: Real>(params: &Params<F>) -> Result<()> {
    for slot in 0..params.len() {
        if !params.grad(slot).all_finite() {
            return Err(Error::NonFiniteGrad {
                name: String::from(params.name(slot)),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update over every parameter, reading the
/// accumulated gradients in `params`. `lr` is passed separately so the
/// annealing schedule can move it without touching the config.
pub fn adam_step<F: Real>(
    params: &mut Params<F>,
    state: &mut AdamState<F>,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    cfg.validate()?;
    check_grads_finite(params)?;
    state.t += 1;
    let b1 = real::<F>(cfg.beta1);
    let b2 = real::<F>(cfg.beta2);
    let one = F::one();
    let corr1 = real::<F>(1.0 - cfg.beta1.powi(state.t as i32));
    let corr2 = real::<F>(1.0 - cfg.beta2.powi(state.t as i32));
    let lr_f = real::<F>(lr);
    let eps = real::<F>(cfg.eps);
    for slot in 0..params.len() {
        let g = params.grad(slot).data().to_vec();
        let m = state.m[slot].data_mut();
        let v = state.v[slot].data_mut();
        let theta = params.value_mut(slot).data_mut();
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            theta[i] = theta[i] - lr_f * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One Nesterov accelerated gradient update. The recurrence, per element:
///
/// ```text
/// v     <- momentum * v + g
/// theta <- theta - lr * (g + momentum * v)
/// ```
///
/// With momentum 0 this is plain SGD; with g = 0 and nonzero velocity the
/// parameters keep coasting along v.
pub fn nag_step<F: Real>(
    params: &mut Params<F>,
    state: &mut NagState<F>,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    cfg.validate()?;
    check_grads_finite(params)?;
    let mu = real::<F>(cfg.momentum);
    let lr_f = real::<F>(lr);
    for slot in 0..params.len() {
        let g = params.grad(slot).data().to_vec();
        let v = state.v[slot].data_mut();
        let theta = params.value_mut(slot).data_mut();
        for i in 0..g.len() {
            v[i] = mu * v[i] + g[i];
            theta[i] = theta[i] - lr_f * (g[i] + mu * v[i]);
        }
    }
    Ok(())
}

/// Scale every gradient by `max / norm` when the global L2 norm exceeds
/// `max`. Returns the norm measured before clipping.
pub fn clip_grad_norm<F: Real>(params: &mut Params<F>, max: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max {
        params.scale_grads(real::<F>(max / norm));
    }
    norm
}

/// The optimizer chosen by config, with its state, behind one `step` call.
pub enum Optimizer<F: Real> {
    Adam(AdamState<F>),
    Nag(NagState<F>),
}

impl<F: Real> Optimizer<F> {
    pub fn new(kind: OptimizerKind, params: &Params<F>) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
            OptimizerKind::Nag => Optimizer::Nag(NagState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut Params<F>, cfg: &OptimizerConfig, lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(s) => adam_step(params, s, cfg, lr),
            Optimizer::Nag(s) => nag_step(params, s, cfg, lr),
        }
    }
}
