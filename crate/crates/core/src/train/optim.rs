//! Adam with decoupled weight decay, and global-norm gradient clipping.

use aevit_tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments, one buffer per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(cfg: AdamConfig, store: &ParamStore<f32>) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamW {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != store.len() {
            return Err(CoreError::Invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        let AdamConfig {
            beta1: b1,
            beta2: b2,
            eps,
            weight_decay: wd,
        } = self.cfg;
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g[j] as f64;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = (mj / c1) / ((vj / c2).sqrt() + eps) + wd * p[j] as f64;
                p[j] = (p[j] as f64 - lr * update) as f32;
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|t| t.data())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescale all gradients by `c / ‖g‖` when the global norm exceeds `c`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [Tensor<f32>], c: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > c {
        let s = c / norm;
        for t in grads.iter_mut() {
            for g in t.data_mut() {
                *g = (*g as f64 * s) as f32;
            }
        }
    }
    norm
}
