//! Evaluation and export of trained policies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    exact_expected_return, exact_mi_quantities_capped, exact_timestep_mi, mean_return,
    write_trajectories_csv, Trajectory,
};
use crate::mi::{
    empirical_mi_discrete, kde_mi, Bandwidth, DiscriminatorCritic, EstimatorKind, HeadKind,
    MIReport, MarginalModel, TimestepCritic, TimestepDiscriminator,
};
use crate::numerics::{rng, AdamConfig};
use crate::trainer::Trainer;

/// Full-batch likelihood steps for the evaluation discriminator.
pub const EVAL_DISC_STEPS: usize = 300;

/// Trajectory-level exact MI is reported only below this many trajectories.
pub const EVAL_ENUMERATION_CAP: u64 = 200_000;

/// Exact quantities of a finite environment under the evaluated policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub expected_return: f64,
    /// `I(a_t; u_t)` for every t.
    pub per_timestep_nats: Vec<f64>,
    /// `I(τ_a, τ_x; τ_u)` when the trajectory space fits the enumeration cap.
    pub trajectory_nats: Option<f64>,
}

impl ExactSummary {
    pub fn episode_average(&self) -> f64 {
        self.per_timestep_nats.iter().sum::<f64>() / self.per_timestep_nats.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub estimator: EstimatorKind,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub episodes: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub return_stderr: f64,
    pub estimates: Vec<MIReport>,
    /// Always present for finite environments.
    pub exact: Option<ExactSummary>,
    pub skipped: Vec<Skipped>,
}

fn skip(estimator: EstimatorKind, reason: impl Into<String>) -> Skipped {
    Skipped {
        estimator,
        reason: reason.into(),
    }
}

fn report(estimator: EstimatorKind, per_timestep_nats: Vec<f64>, sample_count: usize) -> MIReport {
    MIReport {
        per_timestep_nats,
        trajectory_nats: None,
        estimator,
        sample_count,
    }
}

/// Per-timestep discriminator estimate: fit on the first half of `batch`, evaluate on
/// the second half so the estimate is not scored on its own training data.
fn discriminator_estimate(trainer: &Trainer, batch: &[Trajectory], seed: u64) -> Result<MIReport> {
    let env = trainer.env.as_ref();
    let spec = env.spec();
    let kind = HeadKind::for_env(spec);
    let (fit, held) = batch.split_at(batch.len() / 2);
    if fit.is_empty() || held.is_empty() {
        return Err(Error::Estimation(
            "discriminator evaluation needs at least two episodes".into(),
        ));
    }
    let d = &trainer.config.mi.discriminator;
    let mut disc = TimestepDiscriminator::new(
        spec.action_count,
        spec.horizon,
        kind,
        &d.hidden,
        d.activation()?,
        AdamConfig::with_lr(d.lr),
        &mut rng::stream(rng::mix(seed, 0xD15C), 0),
    );
    for t in 0..spec.horizon {
        for _ in 0..EVAL_DISC_STEPS {
            disc.train_step(fit, t)?;
        }
    }
    let marginal = MarginalModel::fit(fit, kind)?;
    let critic = DiscriminatorCritic {
        disc: &disc,
        marginal: &marginal,
    };
    let per_timestep = (0..spec.horizon)
        .map(|t| critic.estimate(held, t))
        .collect::<Result<_>>()?;
    Ok(report(
        EstimatorKind::Discriminator,
        per_timestep,
        held.len(),
    ))
}

fn exact_summary(trainer: &Trainer) -> Result<ExactSummary> {
    let env = trainer.env.as_ref();
    let trajectory_nats =
        match exact_mi_quantities_capped(env, &trainer.policy, EVAL_ENUMERATION_CAP) {
            Ok(q) => Some(q.actions_states_vs_traj_u),
            Err(Error::Capacity { .. }) => None,
            Err(e) => return Err(e),
        };
    Ok(ExactSummary {
        expected_return: exact_expected_return(env, &trainer.policy)?,
        per_timestep_nats: exact_timestep_mi(env, &trainer.policy)?,
        trajectory_nats,
    })
}

/// Roll out `episodes` fresh episodes and estimate MI with each requested estimator.
/// Estimators that do not apply to the environment are listed in `skipped`.
pub fn evaluate(
    trainer: &Trainer,
    episodes: usize,
    seed: u64,
    estimators: &[EstimatorKind],
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let env = trainer.env.as_ref();
    let spec = env.spec();
    let batch = trainer.rollouts(seed, episodes)?;
    let (mean, stderr) = mean_return(&batch);
    let categorical = spec.u_domain.categories().is_some();
    let mut estimates = Vec::new();
    let mut skipped = Vec::new();
    for &est in estimates_in_order(estimators).iter() {
        match est {
            EstimatorKind::Empirical if !categorical => skipped.push(skip(
                est,
                "empirical frequencies need a categorical sensitive state",
            )),
            EstimatorKind::Empirical => {
                let per_timestep = (0..spec.horizon)
                    .map(|t| {
                        let pairs: Vec<(usize, usize)> = batch
                            .iter()
                            .map(|tr| (tr.us[t][0] as usize, tr.actions[t]))
                            .collect();
                        empirical_mi_discrete(&pairs)
                    })
                    .collect::<Result<_>>()?;
                estimates.push(report(est, per_timestep, batch.len()));
            }
            EstimatorKind::Kde if categorical || spec.u_dim != 1 => {
                skipped.push(skip(est, "kde needs a scalar real sensitive state"))
            }
            EstimatorKind::Kde => {
                let mut per_timestep = Vec::with_capacity(spec.horizon);
                for t in 0..spec.horizon {
                    let pairs: Vec<(f64, usize)> = batch
                        .iter()
                        .map(|tr| (tr.us[t][0], tr.actions[t]))
                        .collect();
                    per_timestep.push(kde_mi(&pairs, Bandwidth::Scott)?.nats);
                }
                estimates.push(report(est, per_timestep, batch.len()));
            }
            EstimatorKind::Discriminator if spec.u_dim != 1 => skipped.push(skip(
                est,
                "discriminator heads model a scalar sensitive state",
            )),
            EstimatorKind::Discriminator => match discriminator_estimate(trainer, &batch, seed) {
                Ok(r) => estimates.push(r),
                Err(Error::Estimation(msg)) => skipped.push(skip(est, msg)),
                Err(e) => return Err(e),
            },
            EstimatorKind::Exact if !spec.is_finite => {
                skipped.push(skip(est, format!("`{}` is not enumerable", spec.name)))
            }
            EstimatorKind::Exact => {}
        }
    }
    let exact = if spec.is_finite {
        Some(exact_summary(trainer)?)
    } else {
        None
    };
    Ok(EvalReport {
        env: spec.name.clone(),
        episodes,
        seed,
        mean_return: mean,
        return_stderr: stderr,
        estimates,
        exact,
        skipped,
    })
}

fn estimates_in_order(requested: &[EstimatorKind]) -> Vec<EstimatorKind> {
    let mut out: Vec<EstimatorKind> = Vec::new();
    for e in requested {
        if !out.contains(e) {
            out.push(*e);
        }
    }
    out
}

/// Write `episodes` fresh episodes to a trajectory CSV. Returns the row count.
pub fn export(trainer: &Trainer, episodes: usize, seed: u64, path: &Path) -> Result<usize> {
    let batch = trainer.rollouts(seed, episodes)?;
    write_trajectories_csv(path, &batch)?;
    Ok(batch.iter().map(Trajectory::len).sum())
}
