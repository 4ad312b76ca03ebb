//! Named parameter storage and the Adam optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};

/// Parameters keyed by dotted path (`stage1.res0.conv1.weight`). Ordered so
/// iteration, serialization, and optimizer updates are deterministic.
pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

pub fn cast_store<T: Real, U: Real>(store: &ParamStore<T>) -> ParamStore<U> {
    store.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
}

pub fn parameter_count<T: Real>(store: &ParamStore<T>) -> usize {
    store.values().map(Tensor::len).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamStore<T>,
    pub second_moment: ParamStore<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first_moment: ParamStore::new(),
            second_moment: ParamStore::new(),
        }
    }

    /// One update. Parameters without an entry in `grads` are left as is.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            assert_eq!(g.shape(), p.shape(), "gradient shape for {name}");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr_times_sign() {
        let mut params = ParamStore::new();
        params.insert("w".to_string(), Tensor::<f64>::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut grads = ParamStore::new();
        grads.insert("w".to_string(), Tensor::from_vec(&[2], vec![0.3, -7.0]).unwrap());
        let mut adam = Adam::new(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        adam.step(&mut params, &grads);
        let w = params["w"].data();
        // bias-corrected m/sqrt(v) = sign(g) on the first step
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut params = ParamStore::new();
        params.insert("x".to_string(), Tensor::<f64>::scalar(5.0));
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let x = params["x"].data()[0];
            let mut grads = ParamStore::new();
            grads.insert("x".to_string(), Tensor::scalar(2.0 * (x - 2.0)));
            adam.step(&mut params, &grads);
        }
        assert!((params["x"].data()[0] - 2.0).abs() < 1e-2);
    }
}
