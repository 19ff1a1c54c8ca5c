//! AdamW with decoupled weight decay.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates, one pair per parameter in the store.
#[derive(Debug, Clone)]
pub struct OptState {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl OptState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let m = store.iter().map(|p| Tensor::zeros(p.value.shape.clone())).collect();
        let v = store.iter().map(|p| Tensor::zeros(p.value.shape.clone())).collect();
        OptState { config, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update:
    ///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
    ///   theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * theta )
    /// with bias-corrected m_hat, v_hat. Gradients are consumed, not cleared;
    /// call `zero_grads` afterwards.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        store.ensure_finite_grads()?;
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (idx, id) in store.ids().enumerate().collect::<Vec<_>>() {
            let trainable = store.get(id).trainable;
            if !trainable {
                continue;
            }
            let grads = store.get(id).grad.data.clone();
            let m = &mut self.m[idx].data;
            let v = &mut self.v[idx].data;
            let theta = &mut store.get_mut(id).value.data;
            for i in 0..theta.len() {
                let g = grads[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * theta[i]);
                if !theta[i].is_finite() {
                    let name = store.get(id).name.clone();
                    return Err(Error::NonFinite {
                        what: "parameter",
                        context: name,
                    });
                }
            }
        }
        Ok(())
    }
}
