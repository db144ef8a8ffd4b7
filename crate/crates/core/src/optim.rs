//! Adaptive-moment optimizer with decoupled weight decay and linear warmup.

use crate::autograd::Gradients;
use crate::params::{Bound, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// When positive, the rate decays linearly from the end of warmup to zero at this step.
    pub total_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 6e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 0,
            total_steps: 0,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| vec![0.0; e.value.numel()])
                .collect()
        };
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate for the next step.
    pub fn current_lr(&self) -> f64 {
        let (warm, total) = (self.cfg.warmup_steps, self.cfg.total_steps);
        if warm > 0 && self.step < warm {
            self.cfg.lr * (self.step + 1) as f64 / warm as f64
        } else if total > warm {
            let left = total.saturating_sub(self.step) as f64;
            self.cfg.lr * left / (total - warm) as f64
        } else {
            self.cfg.lr
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, bound: &Bound<'_>, grads: &Gradients) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(bound.get(id)) else {
                continue;
            };
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(id).data_mut();
            for k in 0..w.len() {
                let gk = g.data()[k];
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + c.eps);
                w[k] -= lr * (update + c.weight_decay * w[k]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new(0);
        let id = store.add("w", Tensor::new(&[2], vec![3.0, -2.0]).unwrap());
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        for _ in 0..300 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let w = p.get(id);
            let loss = w.mul(w).unwrap().sum().unwrap();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut store, &p, &grads);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn warmup_ramps_linearly() {
        let store = ParamStore::new(0);
        let opt = AdamW::new(
            AdamWConfig {
                lr: 1.0,
                warmup_steps: 4,
                ..Default::default()
            },
            &store,
        );
        assert_eq!(opt.current_lr(), 0.25);
    }

    #[test]
    fn decay_reaches_zero_at_the_last_step() {
        let mut store = ParamStore::new(0);
        store.zeros("w", &[1]);
        let cfg = AdamWConfig {
            lr: 1.0,
            warmup_steps: 2,
            total_steps: 6,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        let mut seen = Vec::new();
        for _ in 0..7 {
            seen.push(opt.current_lr());
            let tape = Tape::new();
            let p = store.bind(&tape);
            let loss = p.get(store.id("w").unwrap()).sum().unwrap();
            let grads = tape.backward(loss).unwrap();
            opt.step(&mut store, &p, &grads);
        }
        assert_eq!(seen, vec![0.5, 1.0, 1.0, 0.75, 0.5, 0.25, 0.0]);
    }
}
