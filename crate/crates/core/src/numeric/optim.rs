use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Adam with bias-corrected moments. Keeps one moment pair per parameter path.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the store's gradient slots, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for (path, _) in store.params().iter() {
            if store.grads().get(path).is_none() {
                return Err(NumericError::MissingGradient(path.clone()));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (params, grads) = store.split_mut();
        for (path, value) in params.iter_mut() {
            let grad = grads.get(path).expect("checked above");
            let m = self.m.entry(path.clone()).or_insert_with(|| Tensor::zeros_like(value));
            let v = self.v.entry(path.clone()).or_insert_with(|| Tensor::zeros_like(value));
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Grads;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![w]));
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        let mut grads = Grads::default();
        grads.accumulate("w", &Tensor::vector(vec![g])).unwrap();
        s.accumulate_grads(&grads).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = scalar_store(0.75);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.get("w").unwrap().data(), &[0.75]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 1.0);
        let mut opt = Adam::new(AdamConfig {
            lr: 0.001,
            ..AdamConfig::default()
        });
        opt.step(&mut s).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((s.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.grad("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn two_steps_descend_on_quadratic() {
        let mut s = scalar_store(1.0);
        let mut opt = Adam::new(AdamConfig::default());
        let mut f = 1.0;
        for _ in 0..2 {
            let w = s.get("w").unwrap().data()[0];
            set_grad(&mut s, 2.0 * w);
            opt.step(&mut s).unwrap();
            let w = s.get("w").unwrap().data()[0];
            assert!(w * w < f);
            f = w * w;
        }
    }
}
