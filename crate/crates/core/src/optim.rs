//! MSE loss and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

/// Mean squared error and its gradient with respect to the prediction.
///
/// Returns `(1/N) * sum((pred - target)^2)` and `(2/N) * (pred - target)`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::Contract(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::Contract("mse_loss on empty tensors".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut loss = 0.0;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let diff = p - t;
        loss += diff * diff;
        *g = 2.0 * inv_n * diff;
    }
    Ok((loss * inv_n, grad))
}

/// Adam hyperparameters. Defaults are the canonical ones.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid Adam hyperparameters: {self:?}")))
        }
    }
}

/// Per-parameter Adam moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// First moment (mean of gradients).
    pub m: Tensor,
    /// Second moment (mean of squared gradients), elementwise >= 0.
    pub v: Tensor,
    /// Completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `param.value` from `param.grad`.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    hyper.validate()?;
    if !state.m.same_shape(&param.value) || !state.v.same_shape(&param.value) {
        return Err(Error::Contract(format!(
            "Adam state shape {:?} does not match parameter '{}' {:?}",
            state.m.shape(),
            param.name,
            param.value.shape()
        )));
    }
    param
        .grad()
        .check_finite(&format!("gradient of parameter '{}'", param.name))?;

    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    let n = param.len();
    for i in 0..n {
        let g = param.grad().data()[i];
        let m = hyper.beta1 * state.m.data()[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * state.v.data()[i] + (1.0 - hyper.beta2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        param.value.data_mut()[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

/// Multiplicative step decay: `lr * factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
}

impl LrSchedule {
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        if self.decay_every_epochs == 0 {
            return self.base_lr;
        }
        let k = (epoch / self.decay_every_epochs) as i32;
        self.base_lr * self.decay_factor.powi(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mse_identity_case() {
        let p = Tensor::from_slice(&[1.0, -2.0, 3.5]);
        let (loss, grad) = mse_loss(&p, &p.clone()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mse_direct_arithmetic() {
        let pred = Tensor::from_slice(&[1.0, 2.0]);
        let target = Tensor::from_slice(&[0.0, 0.0]);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert_relative_eq!(loss, 2.5, max_relative = 1e-15);
        assert_relative_eq!(grad.data()[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(grad.data()[1], 2.0, max_relative = 1e-15);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Tensor::from_slice(&[1.0]);
        let b = Tensor::from_slice(&[1.0, 2.0]);
        assert!(mse_loss(&a, &b).is_err());
    }

    #[test]
    fn mse_gradient_matches_central_differences() {
        // [DERIVED] finite-difference oracle on a random length-8 pair.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pred: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = Tensor::from_slice(&target);
        let (_, grad) = mse_loss(&Tensor::from_slice(&pred), &t).unwrap();
        let eps = 1e-6;
        for i in 0..8 {
            let mut plus = pred.clone();
            let mut minus = pred.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let (lp, _) = mse_loss(&Tensor::from_slice(&plus), &t).unwrap();
            let (lm, _) = mse_loss(&Tensor::from_slice(&minus), &t).unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            assert_relative_eq!(grad.data()[i], numeric, max_relative = 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Parameter::new("w", Tensor::from_slice(&[1.0, -2.0]));
        let mut s = AdamState::new(p.value.shape());
        adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        // [DERIVED] at t=1, m_hat = g and v_hat = g^2, so the update is
        // -lr * g / (|g| + eps).
        let hyper = AdamConfig::default();
        let g = 0.5;
        let mut p = Parameter::new("w", Tensor::from_slice(&[0.0]));
        p.grad_mut().data_mut()[0] = g;
        let mut s = AdamState::new(p.value.shape());
        adam_step(&mut p, &mut s, &hyper).unwrap();
        let expected = -hyper.lr * g / (g.abs() + hyper.epsilon);
        assert_relative_eq!(p.value.data()[0], expected, max_relative = 1e-12);
        assert!((p.value.data()[0] + 0.001).abs() < 1e-6);
    }

    #[test]
    fn adam_bias_correction_never_grows_update() {
        // [DERIVED] with a constant gradient, |update_2| <= |update_1| * (1 + 1e-9).
        let hyper = AdamConfig::default();
        let mut p = Parameter::new("w", Tensor::from_slice(&[0.0]));
        let mut s = AdamState::new(p.value.shape());
        p.grad_mut().data_mut()[0] = 0.5;
        adam_step(&mut p, &mut s, &hyper).unwrap();
        let first = p.value.data()[0];
        p.grad_mut().data_mut()[0] = 0.5;
        adam_step(&mut p, &mut s, &hyper).unwrap();
        let second = p.value.data()[0] - first;
        assert!(second.abs() <= first.abs() * (1.0 + 1e-9));
    }

    #[test]
    fn adam_zero_lr_is_identity_on_value() {
        let hyper = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut p = Parameter::new("w", Tensor::from_slice(&[3.0]));
        p.grad_mut().data_mut()[0] = -1.25;
        let mut s = AdamState::new(p.value.shape());
        adam_step(&mut p, &mut s, &hyper).unwrap();
        assert_eq!(p.value.data()[0], 3.0);
        assert!(s.v.data()[0] > 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = Parameter::new("lstm.w_i", Tensor::from_slice(&[0.0]));
        p.grad_mut().data_mut()[0] = f64::NAN;
        let mut s = AdamState::new(p.value.shape());
        let err = adam_step(&mut p, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("lstm.w_i"));
    }

    #[test]
    fn lr_schedule_halves_every_50() {
        let sched = LrSchedule {
            base_lr: 1e-3,
            decay_factor: 0.5,
            decay_every_epochs: 50,
        };
        assert_eq!(sched.lr_at_epoch(0), 1e-3);
        assert_eq!(sched.lr_at_epoch(49), 1e-3);
        assert_eq!(sched.lr_at_epoch(50), 5e-4);
        assert_eq!(sched.lr_at_epoch(149), 2.5e-4);
    }
}
