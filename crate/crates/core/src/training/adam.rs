use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Side};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("adam: constants out of range: {self:?}")))
        }
    }
}

/// Adam with bias correction; moments are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    steps: u64,
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies `grads` to the parameters of `side`. Parameters without a
    /// gradient (for instance frozen tables) are left alone.
    pub fn step(&mut self, model: &mut Model, side: Side, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFinite {
                step: self.steps as usize,
                what: format!("gradient of {name}"),
            });
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_side_mut(side, &mut |name, param| {
            let Some(g) = grads.get(&name) else { return };
            let m = ms.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = vs.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                if lr != 0.0 {
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Params;

    fn model() -> Model {
        let cfg = ModelConfig {
            vocab_size: 5,
            d_img: 3,
            d_emb: 2,
            d_h: 2,
            split_embedding: false,
        };
        Model::zeros(cfg).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut m = model();
        let mut grads = BTreeMap::new();
        grads.insert("generator.w_proj".to_string(), Tensor::full(&[2, 5], -3.0));
        let mut adam = Adam::new(AdamConfig { lr: 0.01, ..AdamConfig::default() });
        adam.step(&mut m, Side::Generator, &grads).unwrap();
        // bias-corrected first step is lr · g / (|g| + eps)
        let want = 0.01 * 3.0 / (3.0 + 1e-8);
        assert!(m.generator.w_proj.data().iter().all(|&p| (p - want).abs() < 1e-15));
    }

    #[test]
    fn matches_scalar_recurrence() {
        let mut m = model();
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = Adam::new(cfg.clone());
        let gs = [0.5, -1.0, 2.0, 0.25];
        let (mut p, mut mo, mut ve) = (0.0f64, 0.0f64, 0.0f64);
        for (i, &g) in gs.iter().enumerate() {
            let mut grads = BTreeMap::new();
            grads.insert("discriminator.w_ans".to_string(), Tensor::full(&[2, 1], g));
            adam.step(&mut m, Side::Discriminator, &grads).unwrap();
            mo = cfg.beta1 * mo + (1.0 - cfg.beta1) * g;
            ve = cfg.beta2 * ve + (1.0 - cfg.beta2) * g * g;
            let t = i as i32 + 1;
            p -= cfg.lr * (mo / (1.0 - cfg.beta1.powi(t))) / ((ve / (1.0 - cfg.beta2.powi(t))).sqrt() + cfg.eps);
        }
        assert!((m.discriminator.w_ans.data()[0] - p).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_and_other_side_leave_parameters_unchanged() {
        let mut m = model();
        let before = m.checksum();
        let mut grads = BTreeMap::new();
        grads.insert("generator.w_proj".to_string(), Tensor::full(&[2, 5], 1.0));
        Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() })
            .step(&mut m, Side::Generator, &grads)
            .unwrap();
        Adam::new(AdamConfig::default())
            .step(&mut m, Side::Discriminator, &grads)
            .unwrap();
        assert_eq!(m.checksum(), before);
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let mut m = model();
        let mut grads = BTreeMap::new();
        grads.insert("generator.w_proj".to_string(), Tensor::full(&[2, 5], f64::NAN));
        let err = Adam::new(AdamConfig::default()).step(&mut m, Side::Generator, &grads).unwrap_err();
        assert!(err.to_string().contains("w_proj"));
    }
}
