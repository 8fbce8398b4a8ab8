use log::warn;

use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept for every trainable
/// parameter of the store it was created from, in store order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| if p.trainable { vec![0.0; p.value.numel()] } else { Vec::new() })
            .collect();
        Self { config, first: zeros.clone(), second: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held by `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((param, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !param.trainable {
                continue;
            }
            let values = param.value.data_mut();
            for i in 0..values.len() {
                let g = param.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Cosine-annealed learning rate, `lr0 (1 + cos(pi step / total)) / 2`.
/// Steps past the end clamp to zero.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if step > total_steps {
        warn!("learning-rate step {step} is past the schedule end {total_steps}");
        return 0.0;
    }
    if total_steps == 0 {
        return lr0;
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    (lr0 * (1.0 + phase.cos()) / 2.0).max(0.0)
}
