use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Horizon of the linear decay; the learning rate reaches zero here.
    pub total_steps: u64,
}

impl AdamConfig {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        Self {
            base_lr,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            total_steps,
        }
    }

    /// `base_lr · max(0, 1 − t / total_steps)`
    pub fn learning_rate(&self, t: u64) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        self.base_lr * (1.0 - t as f64 / self.total_steps as f64).max(0.0)
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            second: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Overrides the step counter, e.g. to resume a schedule.
    pub fn set_step_count(&mut self, t: u64) {
        self.step = t;
    }

    pub fn current_lr(&self) -> f64 {
        self.config.learning_rate(self.step)
    }

    /// One bias-corrected update using each tensor's attached gradient.
    /// Tensors without a gradient are treated as having a zero gradient.
    /// Gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam state tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let lr = c.learning_rate(self.step);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if m.len() != p.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
            let grad = p.grad().map(<[f64]>::to_vec);
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}
