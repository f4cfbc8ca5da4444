//! The Lagrangian training loop: per-epoch sampling, critic fitting, policy and
//! baseline steps, multiplier updates, checkpoints and the metrics stream.

mod checkpoint;
mod config;
mod dual;
mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_STATE};
pub use config::{
    preset, DualConfig, DualMode, EntropyConfig, MiConfig, MiMode, NetConfig, TrainConfig, PRESETS,
};
pub use dual::{dual_update, entropy_coef, DualState};
pub use run::{latest_checkpoint, resume_training, run_training, METRICS_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{baseline_update, gradient_bundle, BaselineParams, GradDiagnostics, MiTerm};
use crate::mdp::{mean_return, sample_batch, Environment, PolicyParams, Trajectory};
use crate::mi::{
    DiscriminatorCritic, EmpiricalCritic, EstimatorKind, ExactTimestepCritic,
    ExactTrajectoryCritic, HeadKind, MIReport, MarginalModel, TimestepCritic,
    TimestepDiscriminator, TrajectoryCritic, TrajectoryDiscriminator,
    TrajectoryDiscriminatorCritic,
};
use crate::numerics::{rng, AdamConfig, AdamState};

const TAG_POLICY: u64 = 1;
const TAG_BASELINE: u64 = 2;
const TAG_CRITIC: u64 = 3;
const TAG_BATCH: u64 = 4;

/// Seed of the rollout batch for `epoch`.
pub fn batch_seed(seed: u64, epoch: usize) -> u64 {
    rng::mix(rng::mix(seed, TAG_BATCH), epoch as u64)
}

/// Learned critic state carried across epochs.
#[derive(Clone, Debug)]
pub enum CriticState {
    /// Empirical and exact critics are rebuilt from scratch every epoch.
    Stateless,
    Timestep(TimestepDiscriminator),
    Trajectory(TrajectoryDiscriminator),
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_return: f64,
    pub return_stderr: f64,
    pub mi: MIReport,
    /// Multipliers used for this epoch's policy step.
    pub lambdas: Vec<f64>,
    pub entropy_coef: f64,
    pub disc_loss: Option<f64>,
    pub baseline_mse: f64,
    pub grad: GradDiagnostics,
    /// Timesteps whose Gaussian marginal variance hit the floor.
    pub marginal_clamped: Vec<usize>,
}

/// Everything that evolves during training.
pub struct Trainer {
    pub config: TrainConfig,
    pub env: Box<dyn Environment>,
    pub policy: PolicyParams,
    pub policy_adam: AdamState,
    pub baseline: BaselineParams,
    pub baseline_adam: AdamState,
    pub critic: CriticState,
    pub dual: DualState,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = config.env.build()?;
        let spec = env.spec().clone();
        let policy = PolicyParams::init(
            env.as_ref(),
            &config.policy.hidden,
            config.policy.activation()?,
            &mut rng::stream(rng::mix(config.seed, TAG_POLICY), 0),
        );
        let mut policy = policy;
        policy.params.scale_output_layer(config.policy.output_scale);
        let policy_adam =
            AdamState::for_params(&policy.params, AdamConfig::with_lr(config.policy.lr));
        let baseline = BaselineParams::init(
            env.as_ref(),
            &config.baseline.hidden,
            config.baseline.activation()?,
            &mut rng::stream(rng::mix(config.seed, TAG_BASELINE), 0),
        );
        let mut baseline = baseline;
        baseline
            .params
            .scale_output_layer(config.baseline.output_scale);
        let baseline_adam =
            AdamState::for_params(&baseline.params, AdamConfig::with_lr(config.baseline.lr));
        let mut crng = rng::stream(rng::mix(config.seed, TAG_CRITIC), 0);
        let d = &config.mi.discriminator;
        let kind = HeadKind::for_env(&spec);
        let mut critic = match (config.mi.estimator, config.mi.mode) {
            (EstimatorKind::Discriminator, MiMode::ModelFree) => {
                CriticState::Trajectory(TrajectoryDiscriminator::new(
                    spec.action_count,
                    spec.horizon,
                    spec.x_dim,
                    spec.u_constant,
                    kind,
                    &d.hidden,
                    d.activation()?,
                    AdamConfig::with_lr(d.lr),
                    &mut crng,
                ))
            }
            (EstimatorKind::Discriminator, _) => CriticState::Timestep(TimestepDiscriminator::new(
                spec.action_count,
                spec.horizon,
                kind,
                &d.hidden,
                d.activation()?,
                AdamConfig::with_lr(d.lr),
                &mut crng,
            )),
            _ => CriticState::Stateless,
        };
        match &mut critic {
            CriticState::Timestep(disc) => disc
                .params
                .iter_mut()
                .for_each(|p| p.scale_output_layer(d.output_scale)),
            CriticState::Trajectory(disc) => {
                if let Some(p) = disc.params.as_mut() {
                    p.scale_output_layer(d.output_scale);
                }
            }
            CriticState::Stateless => {}
        }
        let dual = DualState::new(
            config.lambdas(spec.horizon)?,
            config.epsilons(spec.horizon)?,
            config.dual.mode,
            config.dual.step,
        );
        Ok(Trainer {
            config,
            env,
            policy,
            policy_adam,
            baseline,
            baseline_adam,
            critic,
            dual,
            epoch: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Sample, fit the critic, step policy and baseline, update multipliers.
    /// Divergence errors carry the epoch index.
    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        self.epoch_inner(epoch).map_err(|e| e.at_epoch(epoch))
    }

    fn epoch_inner(&mut self, epoch: usize) -> Result<EpochRecord> {
        let cfg = &self.config;
        let env = self.env.as_ref();
        let batch = sample_batch(
            env,
            &self.policy,
            batch_seed(cfg.seed, epoch),
            cfg.batch_size,
        )?;
        let (mean, stderr) = mean_return(&batch);
        let beta = entropy_coef(epoch, cfg.epochs, &cfg.entropy);
        let horizon = env.spec().horizon;
        let kind = HeadKind::for_env(env.spec());
        let lambdas = self.dual.lambdas.clone();

        let mut disc_loss = None;
        let mut clamped = Vec::new();
        let mut grad = GradDiagnostics::default();
        let report;
        {
            let (ts_critic, traj_critic): (
                Option<Box<dyn TimestepCritic + '_>>,
                Option<Box<dyn TrajectoryCritic + '_>>,
            ) = match (&mut self.critic, cfg.mi.estimator) {
                (CriticState::Timestep(disc), _) => {
                    let marginal = MarginalModel::fit(&batch, kind)?;
                    clamped = marginal.clamped.clone();
                    let mut last = 0.0;
                    for _ in 0..cfg.mi.disc_steps {
                        let mut sum = 0.0;
                        for t in 0..horizon {
                            sum += disc.train_step(&batch, t)?;
                        }
                        last = sum / horizon as f64;
                    }
                    disc_loss = Some(last);
                    let critic = OwnedDiscriminatorCritic {
                        disc: &*disc,
                        marginal,
                    };
                    (Some(Box::new(critic)), None)
                }
                (CriticState::Trajectory(disc), _) => {
                    let marginal = MarginalModel::fit(&batch, kind)?;
                    clamped = marginal.clamped.clone();
                    let mut last = 0.0;
                    for _ in 0..cfg.mi.disc_steps {
                        last = disc.train_step(&batch)?;
                    }
                    disc_loss = Some(last);
                    let critic = OwnedTrajectoryCritic {
                        disc: &*disc,
                        marginal,
                    };
                    (None, Some(Box::new(critic)))
                }
                (CriticState::Stateless, EstimatorKind::Exact)
                    if cfg.mi.mode == MiMode::ModelFree =>
                {
                    (
                        None,
                        Some(Box::new(ExactTrajectoryCritic::new(env, &self.policy)?)),
                    )
                }
                (CriticState::Stateless, EstimatorKind::Exact) => (
                    Some(Box::new(ExactTimestepCritic::new(env, &self.policy)?)),
                    None,
                ),
                (CriticState::Stateless, _) => {
                    (Some(Box::new(EmpiricalCritic::fit(&batch)?)), None)
                }
            };

            let per_timestep = match &ts_critic {
                Some(c) => (0..horizon)
                    .map(|t| c.estimate(&batch, t))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let trajectory = match &traj_critic {
                Some(c) => Some(c.estimate(&batch)?),
                None => None,
            };
            report = MIReport {
                per_timestep_nats: per_timestep,
                trajectory_nats: trajectory,
                estimator: cfg.mi.estimator,
                sample_count: batch.len(),
            };
            if !report.is_finite() {
                return Err(Error::divergence("non-finite MI estimate"));
            }

            for _ in 0..cfg.policy_steps {
                let term = match (cfg.mi.mode, &ts_critic, &traj_critic) {
                    (MiMode::ModelBased, Some(c), _) => MiTerm::PerTimestep {
                        critic: c.as_ref(),
                        lambdas: &lambdas,
                        clip: cfg.mi.weight_clip,
                    },
                    (MiMode::ModelFree, _, Some(c)) => MiTerm::Trajectory {
                        critic: c.as_ref(),
                        lambda: lambdas[0],
                    },
                    _ => MiTerm::None,
                };
                let bundle =
                    gradient_bundle(env, &batch, &self.policy, &self.baseline, beta, term)?;
                let step = bundle.descent_direction();
                if !step.is_finite() {
                    return Err(Error::divergence("non-finite policy gradient"));
                }
                self.policy_adam.step(&mut self.policy.params, &step)?;
                grad = bundle.diagnostics;
            }
        }
        if !self.policy.params.is_finite() {
            return Err(Error::divergence("non-finite policy parameters"));
        }
        let baseline_mse =
            baseline_update(env, &batch, &mut self.baseline, &mut self.baseline_adam)?;
        self.dual = dual_update(&self.dual, &report);
        self.epoch += 1;
        Ok(EpochRecord {
            epoch,
            mean_return: mean,
            return_stderr: stderr,
            mi: report,
            lambdas,
            entropy_coef: beta,
            disc_loss,
            baseline_mse,
            grad,
            marginal_clamped: clamped,
        })
    }

    /// Roll out `count` fresh episodes with the current policy.
    pub fn rollouts(&self, seed: u64, count: usize) -> Result<Vec<Trajectory>> {
        sample_batch(self.env.as_ref(), &self.policy, seed, count)
    }
}

struct OwnedDiscriminatorCritic<'a> {
    disc: &'a TimestepDiscriminator,
    marginal: MarginalModel,
}

impl TimestepCritic for OwnedDiscriminatorCritic<'_> {
    fn log_ratios(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>> {
        DiscriminatorCritic {
            disc: self.disc,
            marginal: &self.marginal,
        }
        .log_ratios(batch, t)
    }
}

struct OwnedTrajectoryCritic<'a> {
    disc: &'a TrajectoryDiscriminator,
    marginal: MarginalModel,
}

impl TrajectoryCritic for OwnedTrajectoryCritic<'_> {
    fn log_ratios(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        TrajectoryDiscriminatorCritic {
            disc: self.disc,
            marginal: &self.marginal,
        }
        .log_ratios(batch)
    }
}
