use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ParamStore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {name} at index {index}")]
    NonFiniteGradient { name: String, index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1.3e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 3.2e-4 }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with decoupled weight decay:
/// `p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)`.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter named in `grads`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<(), OptimError> {
        for (name, g) in grads {
            if let Some(index) = g.iter().position(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { name: name.clone(), index });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let Some(param) = store.get_mut(name) else { continue };
            let st = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                st.m[k] = beta1 * st.m[k] + (1.0 - beta1) * g[k];
                st.v[k] = beta2 * st.v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = st.m[k] / bc1;
                let v_hat = st.v[k] / bc2;
                *p -= lr * weight_decay * *p + lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// First and second moments for a parameter, if it has been updated.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|m| (m.m.as_slice(), m.v.as_slice()))
    }
}
