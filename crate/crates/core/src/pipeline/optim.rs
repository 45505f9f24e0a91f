//! Decoupled-weight-decay Adam over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Moment estimates per parameter tensor, in store order. Weight decay skips
/// rank-1 tensors (biases, norms, embeddings rows).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub params: AdamWParams,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: AdamWParams, store: &ParamStore) -> Self {
        let sizes: Vec<usize> = store.iter().map(|(_, v)| v.as_tensor().elem_count()).collect();
        Self {
            params,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, store: &ParamStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::shape(store.len(), grads.len()));
        }
        self.t += 1;
        let AdamWParams {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.params;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (name, var)) in store.iter().enumerate() {
            let decay = if var.as_tensor().rank() >= 2 { weight_decay } else { 0.0 };
            let mut w = store.values(name)?;
            let g = &grads[i];
            if g.len() != w.len() {
                return Err(Error::shape(w.len(), g.len()));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..w.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                w[j] -= lr * (update + decay * w[j]);
            }
            store.set_values(name, &w)?;
        }
        Ok(())
    }
}
