use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decay weights directly (`theta -= lr * wd * theta`) instead of adding
    /// `wd * theta` to the gradient.
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            decoupled_weight_decay: true,
        }
    }
}

/// Adam with bias correction over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
    frozen: Vec<bool>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor2]) -> Self {
        Self::with_frozen(config, params, vec![false; params.len()])
    }

    /// Parameters flagged in `frozen` are never touched by `step`.
    pub fn with_frozen(config: AdamConfig, params: &[Tensor2], frozen: Vec<bool>) -> Self {
        assert_eq!(frozen.len(), params.len(), "one frozen flag per parameter");
        let zeros = |p: &Tensor2| Tensor2::zeros(p.rows(), p.cols());
        Self {
            config,
            step_count: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            frozen,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    pub fn step(&mut self, params: &mut [Tensor2], grads: &[Tensor2]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params and {} grads for optimizer over {} tensors",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() || g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "tensor {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.first[i].shape()
                    ),
                ));
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
            for (k, theta) in p.data_mut().iter_mut().enumerate() {
                let mut grad = g.data()[k];
                if c.decoupled_weight_decay {
                    *theta -= c.lr * c.weight_decay * *theta;
                } else {
                    grad += c.weight_decay * *theta;
                }
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * grad;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * grad * grad;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *theta -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamConfig {
        AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn one_step_from_zero() {
        let mut p = vec![Tensor2::zeros(1, 1)];
        let mut opt = AdamState::new(cfg(1e-3, 0.0), &p);
        opt.step(&mut p, &[Tensor2::scalar(1.0)]).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].item().unwrap() - expected).abs() < 1e-18);
        assert!((p[0].item().unwrap() - -0.000999999995).abs() < 1e-11);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let init = Tensor2::from_rows(&[vec![0.5, -2.0, 3.0]]).unwrap();
        let mut p = vec![init.clone()];
        let mut opt = AdamState::new(cfg(1e-2, 0.0), &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor2::zeros(1, 3)]).unwrap();
        }
        assert_eq!(p[0], init);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let mut p = vec![Tensor2::scalar(2.0)];
        let mut opt = AdamState::new(cfg(0.1, 0.5), &p);
        opt.step(&mut p, &[Tensor2::scalar(0.0)]).unwrap();
        assert!((p[0].item().unwrap() - 1.9).abs() < 1e-15);

        let mut q = vec![Tensor2::scalar(2.0)];
        let coupled = AdamConfig {
            decoupled_weight_decay: false,
            ..cfg(0.1, 0.5)
        };
        let mut opt = AdamState::new(coupled, &q);
        opt.step(&mut q, &[Tensor2::scalar(0.0)]).unwrap();
        // the decay term acts as a unit-normalised gradient on the first step
        assert!((q[0].item().unwrap() - (2.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut p = vec![Tensor2::scalar(1.0), Tensor2::scalar(1.0)];
        let mut opt = AdamState::with_frozen(cfg(0.1, 0.01), &p, vec![true, false]);
        for _ in 0..10 {
            opt.step(&mut p, &[Tensor2::scalar(1.0), Tensor2::scalar(1.0)])
                .unwrap();
        }
        assert_eq!(p[0].item().unwrap().to_bits(), 1f64.to_bits());
        assert!(p[1].item().unwrap() < 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor2::zeros(2, 2)];
        let mut opt = AdamState::new(AdamConfig::default(), &p);
        assert!(opt.step(&mut p, &[Tensor2::zeros(2, 3)]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn trajectories_are_bit_identical() {
        let run = || {
            let mut p = vec![Tensor2::from_rows(&[vec![0.3, -0.7]]).unwrap()];
            let mut opt = AdamState::new(cfg(1e-2, 1e-2), &p);
            for k in 0..50 {
                let g = p[0].map(|v| 2.0 * v + (k as f64).sin());
                opt.step(&mut p, &[g]).unwrap();
            }
            p[0].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
