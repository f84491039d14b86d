//! Adam with bias correction.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Gradients, Parameters};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("non-finite gradient in `{name}` at element {index}: {value}")]
    NonFiniteGradient { name: String, index: usize, value: f64 },
    #[error("gradient for `{0}` has no matching parameter")]
    UnknownParameter(String),
    #[error("gradient for `{name}` has {got} elements, parameter has {expected}")]
    ShapeMismatch { name: String, expected: usize, got: usize },
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &Parameters) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One update. Parameters without a gradient entry are treated as having
    /// zero gradient. Everything is validated before anything is modified.
    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients) -> Result<(), OptimError> {
        let c = self.config;
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(OptimError::BadLearningRate(c.lr));
        }
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| OptimError::UnknownParameter(name.clone()))?;
            if p.len() != g.len() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    expected: p.len(),
                    got: g.len(),
                });
            }
            if let Some((index, value)) = g.iter().enumerate().find(|(_, x)| !x.is_finite()) {
                return Err(OptimError::NonFiniteGradient {
                    name: name.clone(),
                    index,
                    value: *value,
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        for (name, p) in params.iter_mut() {
            let m = self.m.entry(name.clone()).or_insert_with(|| alloc::vec![0.0; p.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| alloc::vec![0.0; p.len()]);
            let g = grads.get(name);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *w -= c.lr * mh / (libm::sqrt(vh) + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(name: &str, data: Vec<f64>) -> Parameters {
        let mut p = Parameters::new();
        p.insert(name, Tensor::vector(data));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one("w", alloc::vec![1.0, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let mut g = Gradients::new();
        g.insert("w".into(), alloc::vec![0.0, 0.0]);
        s.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", alloc::vec![0.0, 0.0, 0.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let mut g = Gradients::new();
        g.insert("w".into(), alloc::vec![0.3, -7.0, 1e3]);
        s.step(&mut p, &g).unwrap();
        for (w, gi) in p.get("w").unwrap().data().iter().zip([0.3f64, -7.0, 1e3]) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        let mut p = one("w", alloc::vec![1.0; 4]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let f = |p: &Parameters| p.get("w").unwrap().data().iter().map(|w| w * w).sum::<f64>();
        let mut prev = f(&p);
        for _ in 0..50 {
            let g: Vec<f64> = p.get("w").unwrap().data().iter().map(|w| 2.0 * w).collect();
            let mut gm = Gradients::new();
            gm.insert("w".into(), g);
            s.step(&mut p, &gm).unwrap();
            let now = f(&p);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn rejects_bad_gradients_without_mutating() {
        let mut p = one("w", alloc::vec![1.0]);
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let mut g = Gradients::new();
        g.insert("w".into(), alloc::vec![f64::NAN]);
        assert!(matches!(s.step(&mut p, &g), Err(OptimError::NonFiniteGradient { .. })));
        g.insert("w".into(), alloc::vec![1.0, 2.0]);
        assert!(matches!(s.step(&mut p, &g), Err(OptimError::ShapeMismatch { .. })));
        let mut g = Gradients::new();
        g.insert("nope".into(), alloc::vec![1.0]);
        assert!(matches!(s.step(&mut p, &g), Err(OptimError::UnknownParameter(_))));
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
        s.config.lr = 0.0;
        assert!(matches!(s.step(&mut p, &Gradients::new()), Err(OptimError::BadLearningRate(_))));
    }
}
