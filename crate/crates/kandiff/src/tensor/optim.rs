//! Adam optimizer with bias correction.

use std::collections::HashMap;

use super::param::Param;
use super::Scalar;

#[derive(Debug, Clone, Copy)]
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
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers keyed by parameter name, plus the shared
/// step counter used for bias correction.
pub struct Adam<T: Scalar> {
    pub cfg: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over `params` using their accumulated gradients.
    /// Frozen parameters are untouched. Gradients are cleared afterwards.
    pub fn step(&mut self, params: &[Param<T>]) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::fl(self.cfg.beta1);
        let b2 = T::fl(self.cfg.beta2);
        let lr = T::fl(self.cfg.lr);
        let eps = T::fl(self.cfg.eps);
        let bc1 = T::one() - T::fl(self.cfg.beta1).powi(t);
        let bc2 = T::one() - T::fl(self.cfg.beta2).powi(t);

        for p in params {
            if p.frozen() {
                p.zero_grad();
                continue;
            }
            let (m, v) = self
                .moments
                .entry(p.name())
                .or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            let mut i = 0usize;
            p.update_with(|value, grad| {
                m[i] = b1 * m[i] + (T::one() - b1) * grad;
                v[i] = b2 * v[i] + (T::one() - b2) * grad * grad;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *value = *value - lr * mhat / (vhat.sqrt() + eps);
                i += 1;
            });
            p.zero_grad();
        }
    }

    /// (step, name -> (m, v)) view for checkpointing.
    pub fn state(&self) -> (u64, &HashMap<String, (Vec<T>, Vec<T>)>) {
        (self.step, &self.moments)
    }

    pub fn restore(&mut self, step: u64, moments: HashMap<String, (Vec<T>, Vec<T>)>) {
        self.step = step;
        self.moments = moments;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::backward;
    use crate::tensor::Tape;

    /// With a constant gradient of 1, bias correction makes every Adam
    /// update exactly lr / (1 + eps') ~ lr, so the trajectory is a
    /// straight line computable by hand.
    #[test]
    fn constant_gradient_trajectory_by_hand() {
        let p = Param::new("w", vec![1.0f64], &[1]);
        let mut opt: Adam<f64> = Adam::new(AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
        });
        for step in 1..=3 {
            let tape: Tape<f64> = Tape::new();
            let loss = p.tracked(&tape).sum_all();
            backward(&loss).unwrap();
            opt.step(&[p.clone()]);
            let expect = 1.0 - 0.1 * step as f64;
            assert!(
                (p.value().data()[0] - expect).abs() < 1e-9,
                "step {step}: {} vs {expect}",
                p.value().data()[0]
            );
        }
    }

    #[test]
    fn frozen_param_is_skipped() {
        let p = Param::new("w", vec![1.0f64], &[1]);
        p.set_frozen(true);
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default());
        let tape: Tape<f64> = Tape::new();
        let loss = p.tracked(&tape).sum_all();
        backward(&loss).unwrap();
        opt.step(&[p.clone()]);
        assert_eq!(p.value().data()[0], 1.0);
    }

    #[test]
    fn state_roundtrip_restores_moments() {
        let p = Param::new("w", vec![2.0f64, -1.0], &[2]);
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default());
        let tape: Tape<f64> = Tape::new();
        let t = p.tracked(&tape);
        let loss = t.mul(&t).unwrap().sum_all();
        backward(&loss).unwrap();
        opt.step(&[p.clone()]);
        let (step, moments) = opt.state();
        let mut other: Adam<f64> = Adam::new(AdamConfig::default());
        other.restore(step, moments.clone());
        let (s2, m2) = other.state();
        assert_eq!(step, s2);
        assert_eq!(moments, m2);
    }
}
