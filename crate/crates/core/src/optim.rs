//! Adam with linear warm-up followed by linear decay.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of all steps spent ramping the learning rate up from zero.
    pub warmup_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: ModelParams,
    v: ModelParams,
    step: u64,
    total_steps: u64,
    warmup_steps: u64,
    /// Parameters whose path starts with one of these prefixes are not updated.
    frozen_prefixes: Vec<String>,
}

impl Adam {
    pub fn new(params: &ModelParams, config: AdamConfig, total_steps: u64) -> Self {
        let total_steps = total_steps.max(1);
        let warmup_steps = ((config.warmup_fraction * total_steps as f64).ceil() as u64).min(total_steps);
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            total_steps,
            warmup_steps,
            frozen_prefixes: Vec::new(),
        }
    }

    pub fn freeze(&mut self, prefix: &str) {
        self.frozen_prefixes.push(prefix.to_string());
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate for the 0-based step `s`.
    pub fn lr_at(&self, s: u64) -> f64 {
        let lr = self.config.lr;
        if s < self.warmup_steps {
            lr * (s + 1) as f64 / self.warmup_steps as f64
        } else if s >= self.total_steps {
            0.0
        } else {
            lr * (self.total_steps - s) as f64 / (self.total_steps - self.warmup_steps) as f64
        }
    }

    /// One descent step on `grads`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let lr = self.lr_at(self.step);
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let gs = grads.named();
        let ms = self.m.named_mut();
        let vs = self.v.named_mut();
        for ((((path, p), (_, g)), (_, m)), (_, v)) in params.named_mut().into_iter().zip(gs).zip(ms).zip(vs) {
            if self.frozen_prefixes.iter().any(|f| path.starts_with(f.as_str())) {
                continue;
            }
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m.data[i] / bias1;
                let v_hat = v.data[i] / bias2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, EncoderConfig, FccrConfig, ModelState, Variant};
    use crate::types::VocabConfig;

    fn params() -> ModelParams {
        let d = Dims::TINY;
        ModelState::new(
            EncoderConfig {
                d_v: d.d_v,
                d_t: d.d_t,
                d_cm: d.d_cm,
                vocab_size: 10,
                noise_std: 0.0,
                seed: 1,
            },
            FccrConfig {
                d_c: d.d_c,
                d_f: d.d_f,
                n_heads: d.n_heads,
                hidden: d.hidden,
            },
            VocabConfig::default(),
            Variant::Full,
        )
        .unwrap()
        .params
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let p = params();
        let opt = Adam::new(&p, AdamConfig { lr: 1.0, ..AdamConfig::default() }, 100);
        assert!((opt.lr_at(0) - 0.2).abs() < 1e-12);
        assert!((opt.lr_at(4) - 1.0).abs() < 1e-12);
        assert!(opt.lr_at(50) < opt.lr_at(10));
        assert!(opt.lr_at(99) > 0.0);
        assert_eq!(opt.lr_at(100), 0.0);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.head_overall.out.bias.data[0] = 3.0;
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.1, warmup_fraction: 0.0, ..AdamConfig::default() }, 10);
        opt.step(&mut p, &g);
        let moved = before.head_overall.out.bias.data[0] - p.head_overall.out.bias.data[0];
        assert!((moved - 0.1).abs() < 1e-6);
        // Everything with a zero gradient stays put.
        assert_eq!(p.fuse, before.fuse);
    }

    #[test]
    fn frozen_prefix_is_not_updated() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.image.bias.data[0] = 1.0;
        g.head_overall.out.bias.data[0] = 1.0;
        let mut opt = Adam::new(&p, AdamConfig { lr: 0.1, ..AdamConfig::default() }, 10);
        opt.freeze("encoder.");
        opt.step(&mut p, &g);
        assert_eq!(p.image, before.image);
        assert_ne!(p.head_overall, before.head_overall);
    }
}
