use serde::{Deserialize, Serialize};

use crate::mi::MIReport;

use super::config::{DualMode, EntropyConfig};

/// Lagrange multipliers and constraint levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub mode: DualMode,
    pub step: f64,
    /// Coordinate touched by the next update.
    pub cursor: usize,
}

impl DualState {
    pub fn new(lambdas: Vec<f64>, epsilons: Vec<f64>, mode: DualMode, step: f64) -> Self {
        let lambdas = lambdas.into_iter().map(|l| l.max(0.0)).collect();
        DualState {
            lambdas,
            epsilons,
            mode,
            step,
            cursor: 0,
        }
    }

    /// Per-constraint MI estimates matching `lambdas`: the per-timestep vector, or the
    /// trajectory value in trajectory mode.
    pub fn estimates(&self, report: &MIReport) -> Vec<f64> {
        match report.trajectory_nats {
            Some(v) if report.per_timestep_nats.len() != self.lambdas.len() => vec![v],
            _ => report.per_timestep_nats.clone(),
        }
    }
}

/// One projected coordinate step `λ_t ← max(0, λ_t + η(Î_t - ε_t))` on the cyclically
/// selected coordinate. Fixed multipliers are returned unchanged.
pub fn dual_update(dual: &DualState, report: &MIReport) -> DualState {
    let mut next = dual.clone();
    if dual.mode == DualMode::Fixed || dual.lambdas.is_empty() {
        return next;
    }
    let t = dual.cursor % dual.lambdas.len();
    if let Some(est) = dual.estimates(report).get(t) {
        if est.is_finite() {
            next.lambdas[t] = (dual.lambdas[t] + dual.step * (est - dual.epsilons[t])).max(0.0);
        }
    }
    next.cursor = (t + 1) % dual.lambdas.len();
    next
}

/// Entropy bonus weight: linear from `beta0` to zero at `anneal_end_fraction · epochs`.
pub fn entropy_coef(epoch: usize, epochs: usize, cfg: &EntropyConfig) -> f64 {
    let end = cfg.anneal_end_fraction * epochs as f64;
    if end <= 0.0 {
        return 0.0;
    }
    cfg.beta0 * (1.0 - epoch as f64 / end).max(0.0)
}
