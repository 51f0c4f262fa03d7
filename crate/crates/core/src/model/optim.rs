use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam with bias correction and an optional per-parameter step size.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Step size per parameter, in store order.
    pub learning_rates: Vec<f64>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            learning_rates: vec![lr; store.len()],
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_learning_rate(&mut self, store: &ParamStore, name: &str, lr: f64) -> Result<()> {
        let i = store
            .names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Artifact(format!("missing parameter {name}")))?;
        self.learning_rates[i] = lr;
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Artifact(format!(
                "optimizer tracks {} parameters, store has {}, got {} gradients",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for {}", store.names()[bad])));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, param) in store.tensors_mut().iter_mut().enumerate() {
            let lr = self.learning_rates[i];
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, w) in param.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
