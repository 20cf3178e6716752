use alloc::vec::Vec;

use super::{real, Real, Tensor};

/// Central-difference gradient of a scalar function of `x`.
///
/// Each element is perturbed by `+eps` and `-eps` in turn and the slope
/// `(f(x+) - f(x-)) / (2 eps)` recorded. This is the independent check the
/// tape's analytic gradients are compared against; it never touches the
/// backward pass.
pub fn finite_diff_grad<F: Real>(
    x: &Tensor<F>,
    eps: f64,
    mut f: impl FnMut(&Tensor<F>) -> F,
) -> Tensor<F> {
    let e = real::<F>(eps);
    let half = F::one() / (e + e);
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + e;
        let up = f(&probe);
        probe.data_mut()[i] = orig - e;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) * half);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("gradient matches input shape")
}

/// Largest elementwise relative error between two gradients, with `floor`
/// guarding the denominator for near-zero entries.
pub fn max_rel_err<F: Real>(analytic: &Tensor<F>, numeric: &Tensor<F>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let a = a.to_f64().unwrap();
        let n = n.to_f64().unwrap();
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
