use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias correction. Moment buffers exist only for parameters that
/// have received a gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Names of parameters with optimizer state.
    pub fn tracked(&self) -> impl Iterator<Item = &String> {
        self.first.keys()
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let p = params.get_mut(name).ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if p.shape() != grad.shape() {
                return Err(NnError::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    grad.shape(),
                    p.shape()
                )));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; grad.len()]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::scalar(v));
        s
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps)
        let (lr, g, eps) = (0.01, -0.3, 1e-8);
        let mut p = single("w", 1.0);
        let mut opt = Adam::with_betas(lr, 0.9, 0.999, eps);
        let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(g))]);
        opt.step(&mut p, &grads).unwrap();
        let expect = 1.0 - lr * g / (g.abs() + eps);
        assert!((p.get("w").unwrap().item() - expect).abs() < 1e-15);
        assert!((p.get("w").unwrap().item() - (1.0 + lr)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single("w", 0.7);
        let mut opt = Adam::new(0.1);
        let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))]);
        for _ in 0..5 {
            opt.step(&mut p, &grads).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut p = single("w", 2.0);
            let mut opt = Adam::new(0.05);
            for _ in 0..20 {
                let w = p.get("w").unwrap().item();
                let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(2.0 * (w - 0.5)))]);
                opt.step(&mut p, &grads).unwrap();
            }
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single("w", 1.0);
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(vec![2]))]);
        assert!(Adam::new(0.1).step(&mut p, &grads).is_err());
    }
}
