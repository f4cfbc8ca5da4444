use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps_hat: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_hat: default_eps(),
        }
    }
}

/// Adam with bias correction. Steps minimize; callers maximizing pass negated gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            config,
        }
    }

    pub fn for_params(params: &ParamVector, config: AdamConfig) -> Self {
        Self::new(params.len(), config)
    }

    /// One update. An all-zero gradient still advances the moments and the step
    /// counter but leaves the parameters untouched.
    pub fn step(&mut self, params: &mut ParamVector, grads: &ParamVector) -> Result<()> {
        let n = params.len();
        if grads.len() != n || self.first_moment.len() != n || self.second_moment.len() != n {
            return Err(Error::contract(format!(
                "adam: params {n}, grads {}, moments {}",
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::divergence(format!("non-finite gradient entry {i}")));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps_hat,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let all_zero = grads.as_slice().iter().all(|g| *g == 0.0);
        let p = params.as_mut_slice();
        for (i, &g) in grads.as_slice().iter().enumerate() {
            let m = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            let v = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            if !all_zero {
                p[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_fresh_state_is_identity() {
        let mut p = ParamVector::flat(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(0.1));
        adam.step(&mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn unit_gradient_first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps).
        let mut p = ParamVector::flat(vec![0.0]);
        let g = ParamVector::flat(vec![1.0]);
        let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(0.1));
        adam.step(&mut p, &g).unwrap();
        assert!((p.as_slice()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        // constant gradient keeps m̂/√v̂ = 1
        adam.step(&mut p, &g).unwrap();
        assert!((p.as_slice()[0] + 0.2).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = ParamVector::flat(vec![0.0, 0.0]);
        let g = ParamVector::flat(vec![1.0, f64::NAN]);
        let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(0.1));
        let err = adam.step(&mut p, &g).unwrap_err().at_epoch(12);
        assert!(matches!(
            err,
            Error::Divergence {
                epoch: Some(12),
                ..
            }
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut p = ParamVector::flat(vec![0.0, 0.0]);
        let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(0.1));
        assert!(adam.step(&mut p, &ParamVector::flat(vec![1.0])).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = ParamVector::flat(vec![0.5, -0.25, 2.0]);
            let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(3e-3));
            let mut trace = Vec::new();
            for k in 0..50 {
                let g: Vec<f64> = p
                    .as_slice()
                    .iter()
                    .map(|x| 2.0 * x + (k as f64).sin())
                    .collect();
                adam.step(&mut p, &ParamVector::flat(g)).unwrap();
                trace.push(p.clone().into_values());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn zero_gradient_is_identity_for_any_state(
            values in prop::collection::vec(-5.0f64..5.0, 1..8),
            warmup in prop::collection::vec(-3.0f64..3.0, 1..8),
            steps in 0usize..5,
        ) {
            let mut p = ParamVector::flat(values.clone());
            let mut adam = AdamState::for_params(&p, AdamConfig::with_lr(0.05));
            let g: Vec<f64> = (0..values.len()).map(|i| warmup[i % warmup.len()]).collect();
            for _ in 0..steps {
                adam.step(&mut p, &ParamVector::flat(g.clone())).unwrap();
            }
            let before = p.clone();
            let count = adam.step_count;
            adam.step(&mut p, &before.zeros_like()).unwrap();
            prop_assert_eq!(p, before);
            prop_assert_eq!(adam.step_count, count + 1);
        }
    }
}
