//! Adam with a warmup-then-inverse-square-root learning rate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    /// Peak learning rate, reached at the end of warmup.
    pub base_lr: f64,
    /// Zero means a constant `base_lr`.
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { base_lr: 1e-3, warmup_steps: 200, beta1: 0.9, beta2: 0.98, epsilon: 1e-9 }
    }
}

impl AdamConfig {
    /// `base_lr · √w · min(step^−½, step · w^−³ᐟ²)`: linear warmup to
    /// `base_lr` at step `w`, then decay as `base_lr · √(w / step)`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.base_lr;
        }
        let (s, w) = (step.max(1) as f64, self.warmup_steps as f64);
        self.base_lr * w.sqrt() * s.powf(-0.5).min(s * w.powf(-1.5))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(TrainError::Config("optimizer needs base_lr ≥ 0, betas in [0, 1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Per-parameter moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// Learning rate the next step will use.
    pub fn next_learning_rate(&self) -> f64 {
        self.config.learning_rate(self.step + 1)
    }

    /// One bias-corrected Adam update. Parameters without a gradient are
    /// treated as having a zero gradient; a gradient without a parameter or
    /// with a different shape is an error.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &Gradients<f32>) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get(name).ok_or_else(|| TrainError::Config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(TrainError::Config(format!("gradient shape {:?} does not match parameter {name} {:?}", g.shape(), p.shape())));
            }
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient(name.to_string()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let lr = c.learning_rate(self.step);
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let p = params.get(&name).expect("listed name");
            let n = p.len();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(&name).map(Tensor::data);
            let mut data = p.data().to_vec();
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g[i] as f64);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                if lr != 0.0 {
                    let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.epsilon);
                    data[i] = (data[i] as f64 - update) as f32;
                }
            }
            if lr != 0.0 {
                let shape = p.shape().to_vec();
                params.insert(name, Tensor::new(shape, data)?);
            }
        }
        Ok(())
    }
}
