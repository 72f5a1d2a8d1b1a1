//! Adam optimizer with decoupled weight decay.

use std::collections::BTreeMap;

use super::store::NamedTensors;
use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: applied directly to the parameter, not folded into
    /// the gradient.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// Optimizer state: first/second moments per parameter name, step count.
#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step_count: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

/// Plain-data image of an [`Adam`] for checkpointing.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub step_count: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam step over every named gradient.
    ///
    /// The whole step is validated before anything is touched: a non-finite
    /// gradient rejects the step and leaves parameters and moments unchanged.
    pub fn step(
        &mut self,
        params: &mut NamedTensors,
        grads: &BTreeMap<String, Vec<f64>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TensorError::Invalid {
                op: "adam",
                msg: format!("gradient for unknown parameter `{name}`"),
            })?;
            if p.numel() != g.len() {
                return Err(TensorError::GradientSizeMismatch {
                    name: name.clone(),
                    grad_len: g.len(),
                    param_len: p.numel(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient { name: name.clone() });
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        for (name, g) in grads {
            let p = params.get(name).unwrap();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            let mut theta = p.data().to_vec();
            for i in 0..g.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -=
                    c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * theta[i]);
            }
            let shape = p.shape().to_vec();
            params.insert(name.clone(), Tensor::new(shape, theta)?);
        }
        Ok(())
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        AdamSnapshot {
            step_count: self.step_count,
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }

    pub fn restore(cfg: AdamConfig, snap: AdamSnapshot) -> Self {
        Adam {
            cfg,
            step_count: snap.step_count,
            m: snap.m,
            v: snap.v,
        }
    }
}
