//! SGD-with-momentum and Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{DgError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// Per-parameter optimizer buffers, index-aligned with the model's tensor
/// list.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimState<T> {
    Sgd {
        velocity: Vec<Vec<T>>,
    },
    Adam {
        first: Vec<Vec<T>>,
        second: Vec<Vec<T>>,
        step: u64,
    },
}

impl<T: Scalar> OptimState<T> {
    pub fn new(kind: Optimizer, tensor_lens: &[usize]) -> Self {
        let zeros = |lens: &[usize]| lens.iter().map(|&n| vec![T::zero(); n]).collect();
        match kind {
            Optimizer::Sgd => OptimState::Sgd {
                velocity: zeros(tensor_lens),
            },
            Optimizer::Adam => OptimState::Adam {
                first: zeros(tensor_lens),
                second: zeros(tensor_lens),
                step: 0,
            },
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptimState::Sgd { .. } => 0,
            OptimState::Adam { step, .. } => *step,
        }
    }
}

fn check_lens<T>(w: &[T], grad: &[T], buf: &[T]) -> Result<()> {
    if w.len() != grad.len() || w.len() != buf.len() {
        return Err(DgError::Dimension(format!(
            "optimizer buffers disagree: {} weights, {} grads, {} state",
            w.len(),
            grad.len(),
            buf.len()
        )));
    }
    Ok(())
}

/// `v <- momentum * v + (grad + wd * w); w <- w - lr * v`.
pub fn sgd_step<T: Scalar>(
    w: &mut [T],
    grad: &[T],
    velocity: &mut [T],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    check_lens(w, grad, velocity)?;
    for i in 0..w.len() {
        velocity[i] = momentum * velocity[i] + (grad[i] + weight_decay * w[i]);
        w[i] = w[i] - lr * velocity[i];
    }
    Ok(())
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam. `step` must already be incremented for this update
/// (first call passes 1).
#[allow(clippy::too_many_arguments)]
pub fn adam_step<T: Scalar>(
    w: &mut [T],
    grad: &[T],
    first: &mut [T],
    second: &mut [T],
    step: u64,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
) -> Result<()> {
    check_lens(w, grad, first)?;
    check_lens(w, grad, second)?;
    if step == 0 {
        return Err(DgError::Contract("adam step counter must start at 1".into()));
    }
    let t = T::from_f64_const(step as f64);
    let bc1 = T::one() - beta1.powf(t);
    let bc2 = T::one() - beta2.powf(t);
    for i in 0..w.len() {
        first[i] = beta1 * first[i] + (T::one() - beta1) * grad[i];
        second[i] = beta2 * second[i] + (T::one() - beta2) * grad[i] * grad[i];
        let m_hat = first[i] / bc1;
        let v_hat = second[i] / bc2;
        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_hand_example() {
        // w=1.0, grad=0.1, lr=0.01, momentum=0.9, wd=0.0005:
        // v = 0.1 + 0.0005 = 0.1005, w' = 1 - 0.01 * 0.1005 = 0.998995
        let mut w = [1.0f64];
        let mut v = [0.0f64];
        sgd_step(&mut w, &[0.1], &mut v, 0.01, 0.9, 0.0005).unwrap();
        assert!((v[0] - 0.1005).abs() < 1e-15);
        assert!((w[0] - 0.998995).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_zero_wd_is_identity() {
        let mut w = [0.7f64, -1.2];
        let mut v = [0.0f64, 0.0];
        sgd_step(&mut w, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w, [0.7, -1.2]);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        // v2 = 0.9 * v1 + (grad + wd * w1)
        let (lr, mom, wd, grad) = (0.01, 0.9, 0.0005, 0.1);
        let mut w = [1.0f64];
        let mut v = [0.0f64];
        sgd_step(&mut w, &[grad], &mut v, lr, mom, wd).unwrap();
        let (v1, w1) = (v[0], w[0]);
        sgd_step(&mut w, &[grad], &mut v, lr, mom, wd).unwrap();
        let expect_v2 = mom * v1 + (grad + wd * w1);
        assert!((v[0] - expect_v2).abs() < 1e-15);
        assert!((w[0] - (w1 - lr * expect_v2)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        // with bias correction the first update is ~ -lr * sign(grad)
        let mut w = [1.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_step(
            &mut w, &[0.1], &mut m, &mut v, 1, 0.001, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
        )
        .unwrap();
        assert!((w[0] - 0.999).abs() < 1e-6, "w = {}", w[0]);
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut w = [0.4f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        for step in 1..=5 {
            adam_step(
                &mut w, &[0.0], &mut m, &mut v, step, 0.001, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
            )
            .unwrap();
        }
        assert_eq!(w[0], 0.4);
    }

    #[test]
    fn optimizer_state_shapes_follow_tensors() {
        let state: OptimState<f64> = OptimState::new(Optimizer::Adam, &[4, 2]);
        match &state {
            OptimState::Adam { first, second, step } => {
                assert_eq!(first.len(), 2);
                assert_eq!(first[0].len(), 4);
                assert_eq!(second[1].len(), 2);
                assert_eq!(*step, 0);
            }
            _ => panic!("expected adam"),
        }
    }
}
