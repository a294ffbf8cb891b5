use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.entries().iter().map(|e| Tensor::zeros(e.value.rows(), e.value.cols())).collect();
        Self { config, first: zeros(), second: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, grad) in grads.iter() {
            let Some(grad) = grad else { continue };
            let i = id.index();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn first_step_moves_each_weight_by_lr() {
        // With bias correction the first step is lr * g / (|g| + eps).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let mut adam = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        let grads = {
            let mut g = Graph::with_params(&store);
            let w = g.param(id);
            let sq = g.square(w);
            let loss = g.sum(sq);
            g.backward(loss).unwrap().param_grads()
        };
        adam.step(&mut store, &grads);
        let got = store.get(id).data().to_vec();
        let expected = [0.9, -1.9, 0.4];
        for (a, b) in got.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[3.0, -4.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        for _ in 0..2000 {
            let grads = {
                let mut g = Graph::with_params(&store);
                let w = g.param(id);
                let sq = g.square(w);
                let loss = g.sum(sq);
                g.backward(loss).unwrap().param_grads()
            };
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).max_abs() < 1e-3);
    }
}
