//! Estimators of the mutual information between actions and the sensitive state.
//!
//! Per-timestep quantities `I(a_t; u_t)` come from empirical frequency tables,
//! adversarially trained discriminators paired with fitted marginals, a KDE for
//! real-valued `u`, or the exact enumeration of a finite environment. The
//! trajectory quantity `I(τ_a, τ_x; τ_u)` comes from a trajectory discriminator or
//! enumeration. Gradient code consumes all of them through [`TimestepCritic`] and
//! [`TrajectoryCritic`].

mod discrete;
mod discriminator;
mod exact;
mod kde;
mod marginal;

pub use discrete::{empirical_mi_discrete, EmpiricalCritic};
pub use discriminator::{
    mi_from_discriminator, train_timestep_discriminator, train_trajectory_discriminator,
    DiscriminatorCritic, TimestepDiscriminator, TrajectoryDiscriminator,
    TrajectoryDiscriminatorCritic,
};
pub use exact::{ExactTimestepCritic, ExactTrajectoryCritic};
pub use kde::{kde_mi, Bandwidth, KdeMi, MIN_ARM_SAMPLES};
pub use marginal::{fit_marginal, Marginal, MarginalModel};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{EnvSpec, Trajectory, UDomain};
use crate::par;

/// Output head of a discriminator or marginal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Softmax over this many categories.
    Categorical(usize),
    /// Mean and log-variance of a scalar.
    Gaussian,
}

impl HeadKind {
    pub fn for_env(spec: &EnvSpec) -> Self {
        match spec.u_domain {
            UDomain::Categorical(k) => HeadKind::Categorical(k),
            UDomain::Interval { .. } => HeadKind::Gaussian,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            HeadKind::Categorical(k) => *k,
            HeadKind::Gaussian => 2,
        }
    }
}

/// Per-sample estimates of `R(u_t, a_t) = log p(u_t|a_t) - log p(u_t)`.
pub trait TimestepCritic: Sync {
    fn log_ratios(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>>;

    /// Monte-Carlo `I(a_t; u_t)` over `batch`.
    fn estimate(&self, batch: &[Trajectory], t: usize) -> Result<f64> {
        let r = self.log_ratios(batch, t)?;
        Ok(par::tree_sum(&r) / r.len().max(1) as f64)
    }
}

/// Per-trajectory estimates of `log p(τ_u|τ_a,τ_x) - log p(τ_u)`.
pub trait TrajectoryCritic: Sync {
    fn log_ratios(&self, batch: &[Trajectory]) -> Result<Vec<f64>>;

    fn estimate(&self, batch: &[Trajectory]) -> Result<f64> {
        let r = self.log_ratios(batch)?;
        Ok(par::tree_sum(&r) / r.len().max(1) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Empirical,
    Discriminator,
    Kde,
    Exact,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Empirical => "empirical",
            EstimatorKind::Discriminator => "discriminator",
            EstimatorKind::Kde => "kde",
            EstimatorKind::Exact => "exact",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Empirical, Self::Discriminator, Self::Kde, Self::Exact]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// MI estimates for one batch, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIReport {
    pub per_timestep_nats: Vec<f64>,
    pub trajectory_nats: Option<f64>,
    pub estimator: EstimatorKind,
    pub sample_count: usize,
}

impl MIReport {
    pub fn mean_per_timestep(&self) -> f64 {
        let n = self.per_timestep_nats.len();
        self.per_timestep_nats.iter().sum::<f64>() / n.max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.per_timestep_nats
            .iter()
            .chain(&self.trajectory_nats)
            .all(|v| v.is_finite())
    }
}
