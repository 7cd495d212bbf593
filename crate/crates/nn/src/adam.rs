//! Adam with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eta > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first_moment: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step_count: 0,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }

    /// One update:
    ///
    /// ```text
    /// m <- b1 m + (1 - b1) g
    /// v <- b2 v + (1 - b2) g^2
    /// theta <- theta - eta m_hat / (sqrt(v_hat) + eps) - eta wd theta
    /// ```
    ///
    /// Gradients are checked before anything is modified, so a rejected step
    /// leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(NnError::Contract(format!(
                "Adam state tracks {} tensors but got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g)?;
            self.first_moment[i].expect_same_shape(g)?;
            if !g.is_finite() {
                return Err(NnError::Numeric(format!(
                    "non-finite gradient for parameter tensor {i}"
                )));
            }
        }

        let AdamConfig {
            eta,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (k, theta) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *theta -= eta * m_hat / (v_hat.sqrt() + epsilon) + eta * weight_decay * *theta;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(eps: f64) -> AdamConfig {
        AdamConfig {
            eta: 0.01,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: eps,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn first_unit_gradient_step_moves_by_eta() {
        let mut p = Tensor::scalar(1.0);
        let mut state = AdamState::new(cfg(0.0), [&p]);
        state.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert_eq!(p.item(), 1.0 - 0.01);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::new(1, 3, vec![0.3, -2.0, 5.0]).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(cfg(1e-8), [&p]);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[Tensor::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut p = Tensor::scalar(1.0);
        let mut state = AdamState::new(cfg(1e-8), [&p]);
        let err = state
            .step(&mut [&mut p], &[Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert!(matches!(err, NnError::Numeric(_)));
        assert_eq!(p.item(), 1.0);
        assert_eq!(state.step_count, 0);
    }

    #[test]
    fn ten_steps_on_a_parabola_match_a_scalar_reimplementation() {
        let c = AdamConfig {
            eta: 0.1,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
            weight_decay: 0.01,
        };
        let mut p = Tensor::scalar(1.0);
        let mut state = AdamState::new(c, [&p]);

        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * p.item();
            state.step(&mut [&mut p], &[Tensor::scalar(g)]).unwrap();

            let g = 2.0 * theta;
            m = 0.5 * m + 0.5 * g;
            v = 0.9 * v + 0.1 * g * g;
            let m_hat = m / (1.0 - 0.5f64.powi(t));
            let v_hat = v / (1.0 - 0.9f64.powi(t));
            theta = theta - 0.1 * m_hat / (v_hat.sqrt() + 1e-8) - 0.1 * 0.01 * theta;
            assert!((p.item() - theta).abs() < 1e-12, "step {t}");
        }
    }
}
