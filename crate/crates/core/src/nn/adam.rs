use std::collections::HashMap;

use rgbd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::params::{Group, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1.5e-3, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Adam over one parameter group, with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub group: Group,
    pub steps: u64,
    pub ids: Vec<ParamId>,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, group: Group, cfg: AdamConfig) -> Self {
        let ids = store.ids_in(group);
        let zeros: Vec<Tensor<f32>> = ids.iter().map(|&id| Tensor::zeros(store.get(id).shape().to_vec())).collect();
        Self { cfg, group, steps: 0, ids, m: zeros.clone(), v: zeros }
    }

    /// One update. Parameters without an entry in `grads` are left alone.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &HashMap<ParamId, Tensor<f32>>) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        let step = (self.cfg.lr * c2.sqrt() / c1) as f32;
        let eps = (self.cfg.eps * c2.sqrt()) as f32;
        for (slot, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.get(&id) else { continue };
            assert_eq!(g.shape(), store.get(id).shape(), "gradient shape for {}", store.name(id));
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}
