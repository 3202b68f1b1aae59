use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for one network, aligned with its [`Parameters`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &impl Parameters) -> Self {
        let zeros: Vec<Tensor> = params.named().into_iter().map(|(_, t)| Tensor::zeros_like(t)).collect();
        Self { step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update<P: Parameters>(&mut self, cfg: &AdamConfig, params: &mut P, grads: &P) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = (1.0 - cfg.beta1.powi(t)) as f32;
        let c2 = (1.0 - cfg.beta2.powi(t)) as f32;
        let lr = cfg.lr as f32;
        let eps = cfg.eps as f32;
        let grads = grads.named();
        for (((p, (_, g)), m), v) in params.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
