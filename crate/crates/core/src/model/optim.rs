use serde::{Deserialize, Serialize};

/// Inverse-square-root schedule: linear warmup to `peak_lr`, then
/// `peak_lr * sqrt(warmup / step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_steps: 500,
        }
    }
}

impl LrSchedule {
    /// Learning rate of the 1-based optimizer step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        if s < w {
            self.peak_lr * s / w
        } else {
            self.peak_lr * (w / s).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: usize,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One update; returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut [f32], grad: &mut [f32], lr: f64) -> f64 {
        let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
        let c = &self.config;
        if c.clip_norm > 0.0 && norm > c.clip_norm {
            let s = (c.clip_norm / norm) as f32;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        self.t += 1;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = (lr * bc2.sqrt() / bc1) as f32;
        let eps = (c.eps * bc2.sqrt()) as f32;
        for ((p, g), (m, v)) in params.iter_mut().zip(grad.iter()).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
        norm
    }
}
