use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by `decay_rate^(step / decay_steps)`.
    pub decay_rate: f64,
    pub decay_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 0.5,
            decay_steps: 200_000,
        }
    }
}

/// Adam with exponentially decaying learning rate. Moment estimates are kept
/// in single precision alongside the parameters so a checkpoint can restore
/// them exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |_| -> Vec<Vec<f32>> {
            store.iter().map(|(_, p)| vec![0.0; if p.trainable { p.data.len() } else { 0 }]).collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        let c = &self.config;
        c.learning_rate * c.decay_rate.powf(step as f64 / c.decay_steps.max(1) as f64)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        let lr = self.learning_rate(self.step);
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        for (id, g) in grads {
            let p = store.get_mut(*id);
            assert!(p.trainable, "{} is not trainable", p.name);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            for (((w, mi), vi), &gi) in p.data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                let m_new = c.beta1 * *mi as f64 + (1.0 - c.beta1) * gi;
                let v_new = c.beta2 * *vi as f64 + (1.0 - c.beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / bias1) / ((v_new / bias2).sqrt() + c.eps);
                *w = (*w as f64 - update) as f32;
            }
        }
    }
}
