use std::collections::BTreeMap;

use crate::params::{group_of, layout, Params};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with a learning-rate multiplier per parameter group.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    base_lr: f64,
    tensors: Vec<(String, usize, f64)>,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    /// Groups absent from `multipliers` use 1.0.
    pub fn new<P: Params<T> + ?Sized>(params: &P, base_lr: f64, multipliers: &BTreeMap<String, f64>) -> Self {
        let tensors: Vec<(String, usize, f64)> = layout(params)
            .into_iter()
            .map(|(name, len)| {
                let mult = multipliers.get(group_of(&name)).copied().unwrap_or(1.0);
                (name, len, base_lr * mult)
            })
            .collect();
        let n = tensors.iter().map(|t| t.1).sum();
        Self {
            base_lr,
            tensors,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    /// Learning rate applied to a group (base × multiplier).
    pub fn effective_lr(&self, group: &str) -> Option<f64> {
        self.tensors
            .iter()
            .find(|(name, _, _)| group_of(name) == group)
            .map(|t| t.2)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step<P: Params<T> + ?Sized>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let b1 = T::of(BETA1);
        let b2 = T::of(BETA2);
        let eps = T::of(EPSILON);
        let bc1 = T::one() - T::of(BETA1.powi(self.step as i32));
        let bc2 = T::one() - T::of(BETA2.powi(self.step as i32));
        let g = crate::params::flatten(grads);
        let (m, v, tensors) = (&mut self.m, &mut self.v, &self.tensors);
        let mut pos = 0;
        let mut tensor = 0;
        params.visit_mut("", &mut |name, xs| {
            let (expected, len, lr) = &tensors[tensor];
            debug_assert_eq!(name, expected);
            debug_assert_eq!(xs.len(), *len);
            let lr = T::of(*lr);
            for x in xs.iter_mut() {
                let gi = g[pos];
                m[pos] = b1 * m[pos] + (T::one() - b1) * gi;
                v[pos] = b2 * v[pos] + (T::one() - b2) * gi * gi;
                let m_hat = m[pos] / bc1;
                let v_hat = v[pos] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
                pos += 1;
            }
            tensor += 1;
        });
    }
}
