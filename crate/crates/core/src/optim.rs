//! Adam with optional global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, clip_norm: Option<f64>) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value().numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update from the accumulated gradients, then zero them.
    /// Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<f64> {
        if self.m.len() != params.len() {
            return Err(Error::contract("optimizer state does not match parameter set"));
        }
        for p in params.iter() {
            if !p.grad().is_finite() {
                return Err(Error::Training(format!("non-finite gradient for parameter {}", p.name())));
            }
        }
        let norm = params.grad_global_norm();
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad: Vec<f64> = params.grad(id).data().iter().map(|g| g * scale).collect();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let value = params.value_mut(id).data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
        Ok(norm)
    }
}
