use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
    pub config: AdamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient held a NaN or infinity; parameter and moments untouched.
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        Self {
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            step_count: 0,
            config,
        }
    }

    pub fn for_param(param: &Tensor, config: AdamConfig) -> Self {
        Self::new(param.rows(), param.cols(), config)
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<StepOutcome> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Shape(format!(
            "adam_step param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if !grad.all_finite() {
        return Ok(StepOutcome::SkippedNonFinite);
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *mi = beta1 * *mi + (1.0 - beta1) * g;
        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_param() {
        let mut p = Tensor::row(&[1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut s = AdamState::for_param(&p, AdamConfig::default());
        adam_step(&mut p, &Tensor::zeros(1, 3), &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn constant_grad_update_tends_to_lr_sign() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut p = Tensor::row(&[0.0, 0.0, 0.0]);
        let g = Tensor::row(&[0.3, -2.0, 1e-3]);
        let mut s = AdamState::for_param(&p, cfg);
        let mut prev = p.clone();
        for _ in 0..1000 {
            prev = p.clone();
            adam_step(&mut p, &g, &mut s).unwrap();
        }
        for i in 0..3 {
            let update = p.data()[i] - prev.data()[i];
            let expected = -cfg.learning_rate * g.data()[i].signum();
            assert!(
                (update - expected).abs() <= 1e-3 * cfg.learning_rate,
                "{update} vs {expected}"
            );
        }
        assert_eq!(s.step_count, 1000);
    }

    #[test]
    fn non_finite_grad_is_skipped() {
        let mut p = Tensor::row(&[1.0]);
        let mut s = AdamState::for_param(&p, AdamConfig::default());
        let out = adam_step(&mut p, &Tensor::row(&[f64::NAN]), &mut s).unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::row(&[1.0, 2.0]);
        let mut s = AdamState::for_param(&p, AdamConfig::default());
        assert!(adam_step(&mut p, &Tensor::row(&[1.0]), &mut s).is_err());
    }
}
