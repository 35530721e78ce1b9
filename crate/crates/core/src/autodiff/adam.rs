use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{HeroError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every trainable entry. Frozen
    /// entries are never touched.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (name, p) in params.iter() {
            if p.trainable && p.tensor.grad().is_none() {
                return Err(HeroError::MissingGrad(name.clone()));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let n = p.tensor.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let data = p.tensor.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if weight_decay != 0.0 {
                    data[i] -= lr * weight_decay * data[i];
                }
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0), true);
        s.get_mut("w").unwrap().tensor.set_grad(vec![1.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1));
        adam.step(&mut s).unwrap();
        assert!((s.tensor("w").unwrap().item() + 0.1).abs() < 1e-6);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![1.5, -2.0]), true);
        s.get_mut("w").unwrap().tensor.set_grad(vec![0.0, 0.0]).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1));
        adam.step(&mut s).unwrap();
        assert_eq!(s.tensor("w").unwrap().data(), &[1.5, -2.0]);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0), true);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut s), Err(HeroError::MissingGrad(_))));
    }

    #[test]
    fn frozen_untouched() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0), true);
        s.insert("f", Tensor::scalar(1.0), false);
        s.get_mut("w").unwrap().tensor.set_grad(vec![1.0]).unwrap();
        s.get_mut("f").unwrap().tensor.set_grad(vec![1.0]).unwrap();
        AdamState::new(AdamConfig::with_lr(0.1)).step(&mut s).unwrap();
        assert_eq!(s.tensor("f").unwrap().item(), 1.0);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0), true);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1));
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let mut g = Graph::new();
            let w = g.param(&s, "w").unwrap();
            let d = g.add_scalar(w, -2.0);
            let loss = g.mul(d, d).unwrap();
            let l = g.item(loss);
            assert!(l < last);
            last = l;
            g.backward(loss, &mut s).unwrap();
            adam.step(&mut s).unwrap();
        }
    }
}
