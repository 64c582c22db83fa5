//! AdamW with decoupled weight decay and bias-corrected moments.

use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamWConfig) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update from the gradients currently stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() || store.iter().zip(&self.m).any(|(p, m)| p.value.len() != m.len()) {
            return Err(Error::domain(
                "optimizer state was not initialized for this parameter set",
            ));
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data().to_vec();
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g as f64;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let x = *w as f64;
                *w = (x - lr * weight_decay * x - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f32], grads: &[f32]) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new([values.len()], values.to_vec()).unwrap());
        s.get_mut(id).grad.data_mut().copy_from_slice(grads);
        s
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut s = store(&[0.3, -2.0], &[0.0, 0.0]);
        let before = s.clone();
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = OptimizerState::new(&s, cfg);
        opt.step(&mut s).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let g = [0.5f32, -3.0, 1e-3];
        let mut s = store(&[1.0, 1.0, 1.0], &g);
        let cfg = AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        OptimizerState::new(&s, cfg).step(&mut s).unwrap();
        for (w, g) in s.get(crate::autodiff::ParamId(0)).value.data().iter().zip(g) {
            // m_hat = g, v_hat = g^2 after bias correction.
            let expected = 1.0 - 1e-2 * g as f64 / ((g as f64).abs() + 1e-8);
            assert!((*w as f64 - expected).abs() < 1e-6, "{w} vs {expected}");
        }
    }

    #[test]
    fn decay_only_shrinks_by_factor() {
        let mut s = store(&[2.0, -4.0], &[0.0, 0.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        OptimizerState::new(&s, cfg).step(&mut s).unwrap();
        let v = s.iter().next().unwrap().value.data().to_vec();
        assert!((v[0] - 2.0 * 0.95).abs() < 1e-6);
        assert!((v[1] + 4.0 * 0.95).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = store(&[0.7, 0.1], &[5.0, -1.0]);
        let before = s.clone();
        let cfg = AdamWConfig {
            lr: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = OptimizerState::new(&s, cfg);
        for _ in 0..3 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value, before.iter().next().unwrap().value);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut s = store(&[1.0], &[1.0]);
        let mut opt = OptimizerState::new(&ParamStore::new(), AdamWConfig::default());
        assert!(opt.step(&mut s).is_err());
    }
}
