//! Adam with bias correction and no learning-rate schedule.

use cto_tensor::{Element, ParamStore};
use serde::Serialize;

use crate::error::{CtoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errors.push(format!("optim.lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errors.push(format!("optim.{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            errors.push(format!("optim.eps must be positive, got {}", self.eps));
        }
        errors
    }
}

/// First and second moment estimates per parameter, in store order.
#[derive(Clone, Debug)]
pub struct Adam<T: Element> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.value.numel()])
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients currently held by `store`. Parameters
    /// without a gradient keep their value and moments.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(CtoError::Data(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, lr, eps) = (T::one(), T::lit(c.lr), T::lit(c.eps));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = store.grad(id) else { continue };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let mut value = store.get(id).to_vec();
            for i in 0..value.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            store.set_value(id, value)?;
        }
        Ok(())
    }
}
