//! Adam with global-norm gradient clipping.

use std::collections::HashMap;

use super::{Grads, ParamStore};

/// Global L2 norm above which gradients are rescaled.
pub const GRAD_CLIP: f64 = 0.5;

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: HashMap<usize, Vec<f64>>,
    v: HashMap<usize, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

impl Adam {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    /// One update. Clips first, then applies a bias-corrected step. Only
    /// parameters reached by this step's gradients move; the shared step
    /// counter advances once per call.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.step_with_clip(store, grads, lr, GRAD_CLIP);
    }

    /// `step` with an explicit clip norm.
    pub fn step_with_clip(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, max_norm: f64) {
        self.t += 1;
        let norm = grads.global_norm();
        let clip = if norm > max_norm { max_norm / norm } else { 1.0 };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let n = g.numel();
            let m = self.m.entry(id.0).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(id.0).or_insert_with(|| vec![0.0; n]);
            assert_eq!(m.len(), n, "gradient shape changed between steps");
            let p = store.tensor_mut(id);
            for i in 0..n {
                let gi = g.data[i] as f64 * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] = (p.data[i] as f64 - lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}
