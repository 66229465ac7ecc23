use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Adam hyper-parameters. Defaults follow the BERT fine-tuning recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-6, weight_decay: 0.01 }
    }
}

/// Biases and layernorm parameters are excluded from weight decay.
pub fn applies_weight_decay(name: &str) -> bool {
    !(name.ends_with(".bias") || name.split('.').any(|part| part == "ln"))
}

/// Moments for every trainable parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    first: BTreeMap<String, Vec<f32>>,
    second: BTreeMap<String, Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState { config, t: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam step with decoupled weight decay.
    ///
    /// `grads` must cover exactly the trainable parameters of `params`.
    /// Frozen parameters are never touched.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let trainable: Vec<String> = params.trainable_names().map(str::to_string).collect();
        if trainable.len() != grads.len() || trainable.iter().any(|n| !grads.contains_key(n)) {
            let missing: Vec<_> = trainable.iter().filter(|n| !grads.contains_key(*n)).collect();
            let extra: Vec<_> = grads.keys().filter(|n| !trainable.contains(n)).collect();
            return Err(Error::GradientCoverage(format!("missing {missing:?}, unexpected {extra:?}")));
        }
        for name in &trainable {
            let p = params.get(name).expect("listed above");
            if p.shape() != grads[name].shape() {
                return Err(Error::GradientShape {
                    name: name.clone(),
                    grad: grads[name].shape().to_vec(),
                    param: p.shape().to_vec(),
                });
            }
        }

        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - (c.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (c.beta2 as f64).powi(self.t as i32);
        let (bc1, bc2) = (bc1 as f32, bc2 as f32);

        for name in trainable {
            let g = grads[&name].data();
            let theta = params.get(&name).expect("listed above");
            let n = theta.len();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let decay = if applies_weight_decay(&name) { c.weight_decay } else { 0.0 };
            let mut out = theta.to_vec();
            for i in 0..n {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let step = m_hat / (v_hat.sqrt() + c.epsilon) + decay * out[i];
                out[i] -= c.lr * step;
            }
            let shape = theta.shape().to_vec();
            params.replace_value(&name, Tensor::from_parts(shape, out))?;
        }
        Ok(())
    }
}
