//! Adam with a linear warmup / linear decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::model::{Gradients, Parameters};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    first: Parameters,
    second: Parameters,
    steps: u64,
}

impl Adam {
    pub fn new(params: &Parameters, config: AdamConfig) -> Self {
        Adam {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update. `grads` must have the shapes of `params`.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) {
        self.steps += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((p, &g), m), v) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
    }
}

/// Learning rate at zero-based `step`: rises linearly to `peak` over
/// `warmup` steps, then falls linearly to zero at `total`.
pub fn linear_schedule(step: u64, total: u64, warmup: u64, peak: f64) -> f64 {
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else if total <= warmup {
        peak
    } else {
        peak * total.saturating_sub(step) as f64 / (total - warmup) as f64
    }
}
