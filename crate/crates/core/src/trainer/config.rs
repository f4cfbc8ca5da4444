use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{CustomerServiceEnv, EnvConfig, ParticleEnv, SnapConfig, VpnEnv};
use crate::error::{Error, Result};
use crate::mi::{EstimatorKind, HeadKind};
use crate::numerics::Activation;

/// Which MI constraint the policy gradient carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiMode {
    /// Plain REINFORCE; MI is still measured for the metrics.
    None,
    /// Per-timestep `I(a_t; u_t)` constraints with exact dynamics.
    ModelBased,
    /// One `I(τ_a, τ_x; τ_u)` constraint from sampled trajectories.
    ModelFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMode {
    Fixed,
    CoordinateDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub lr: f64,
    /// Factor on the initial output-layer weights.
    pub output_scale: f64,
}

impl NetConfig {
    fn new(hidden: &[usize], lr: f64) -> Self {
        NetConfig {
            hidden: hidden.to_vec(),
            activation: "tanh".into(),
            lr,
            output_scale: 1.0,
        }
    }

    fn output_scale(mut self, f: f64) -> Self {
        self.output_scale = f;
        self
    }

    pub fn activation(&self) -> Result<Activation> {
        Activation::parse(&self.activation).ok_or_else(|| {
            Error::config(
                "activation",
                format!("unknown activation `{}`", self.activation),
            )
        })
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::new(&[64, 64], 1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiConfig {
    pub mode: MiMode,
    pub estimator: EstimatorKind,
    pub discriminator: NetConfig,
    /// Discriminator steps per epoch.
    pub disc_steps: usize,
    pub weight_clip: f64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            mode: MiMode::ModelBased,
            estimator: EstimatorKind::Discriminator,
            discriminator: NetConfig::new(&[64, 64], 1e-3),
            disc_steps: 1,
            weight_clip: crate::grad::DEFAULT_WEIGHT_CLIP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    pub mode: DualMode,
    /// One value per timestep, or a single value used everywhere.
    pub lambdas: Vec<f64>,
    /// Constraint levels ε_t, same convention as `lambdas`.
    pub epsilons: Vec<f64>,
    pub step: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig {
            mode: DualMode::Fixed,
            lambdas: vec![0.0],
            epsilons: vec![0.0],
            step: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub beta0: f64,
    pub anneal_end_fraction: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            beta0: 0.1,
            anneal_end_fraction: 0.5,
        }
    }
}

/// A full training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Policy steps per epoch on the same batch.
    #[serde(default = "one")]
    pub policy_steps: usize,
    /// Pin batch work to one worker thread.
    #[serde(default)]
    pub deterministic: bool,
    /// Epochs between checkpoints; the final epoch is always saved. 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    #[serde(default)]
    pub policy: NetConfig,
    #[serde(default)]
    pub baseline: NetConfig,
    #[serde(default)]
    pub mi: MiConfig,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
}

fn one() -> usize {
    1
}

fn broadcast(values: &[f64], horizon: usize, field: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; horizon]),
        n if n == horizon => Ok(values.to_vec()),
        n => Err(Error::config(
            field,
            format!("expected 1 or {horizon} values, got {n}"),
        )),
    }
}

impl TrainConfig {
    /// Parse TOML; unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let named = msg
                .split('`')
                .nth(1)
                .filter(|f| !f.is_empty())
                .map(str::to_string);
            let spanned = e
                .span()
                .map(|s| text[s].lines().next().unwrap_or("").trim().to_string())
                .filter(|f| !f.is_empty());
            Error::config(named.or(spanned).unwrap_or_else(|| "config".into()), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if let Some(cfg) = preset(name_or_path) {
            return Ok(cfg);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config(
                    "config",
                    format!(
                        "`{name_or_path}` is neither a file nor a preset ({})",
                        PRESETS.join(", ")
                    ),
                )
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.policy_steps == 0 || self.mi.disc_steps == 0 {
            return Err(Error::config(
                "policy_steps",
                "step counts must be at least 1",
            ));
        }
        for (name, v) in [
            ("policy.output_scale", self.policy.output_scale),
            ("baseline.output_scale", self.baseline.output_scale),
            (
                "mi.discriminator.output_scale",
                self.mi.discriminator.output_scale,
            ),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        for (name, lr) in [
            ("policy.lr", self.policy.lr),
            ("baseline.lr", self.baseline.lr),
            ("mi.discriminator.lr", self.mi.discriminator.lr),
            ("dual.step", self.dual.step),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        self.policy.activation()?;
        self.baseline.activation()?;
        self.mi.discriminator.activation()?;
        if !(self.mi.weight_clip > 0.0) {
            return Err(Error::config("mi.weight_clip", "must be positive"));
        }
        if self.dual.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::config(
                "dual.lambdas",
                "multipliers must be non-negative",
            ));
        }
        if !(self.entropy.beta0 >= 0.0 && (0.0..=1.0).contains(&self.entropy.anneal_end_fraction)) {
            return Err(Error::config(
                "entropy",
                "need beta0 >= 0 and anneal_end_fraction in [0, 1]",
            ));
        }
        if self.mi.estimator == EstimatorKind::Kde {
            return Err(Error::config(
                "mi.estimator",
                "kde is an evaluation estimator, not a training critic",
            ));
        }
        let env = self.env.build()?;
        let spec = env.spec();
        let horizon = spec.horizon;
        match self.mi.mode {
            MiMode::ModelFree => {
                broadcast(&self.dual.lambdas, 1, "dual.lambdas")?;
                broadcast(&self.dual.epsilons, 1, "dual.epsilons")?;
                if self.mi.estimator == EstimatorKind::Empirical {
                    return Err(Error::config(
                        "mi.estimator",
                        "trajectory mode needs a discriminator or exact critic",
                    ));
                }
            }
            _ => {
                broadcast(&self.dual.lambdas, horizon, "dual.lambdas")?;
                broadcast(&self.dual.epsilons, horizon, "dual.epsilons")?;
            }
        }
        let categorical = matches!(HeadKind::for_env(spec), HeadKind::Categorical(_));
        if self.mi.estimator == EstimatorKind::Empirical && !categorical {
            return Err(Error::config(
                "mi.estimator",
                "empirical frequencies need a categorical sensitive state",
            ));
        }
        if self.mi.estimator == EstimatorKind::Exact && !spec.is_finite {
            return Err(Error::config(
                "mi.estimator",
                format!(
                    "exact MI needs a finite environment, `{}` is not",
                    spec.name
                ),
            ));
        }
        if self.mi.mode == MiMode::ModelBased && !spec.has_exact_dynamics {
            return Err(Error::config(
                "mi.mode",
                format!(
                    "`{}` has no exact dynamics for the model-based gradient",
                    spec.name
                ),
            ));
        }
        Ok(())
    }

    /// Multipliers resolved to one per timestep (or one in trajectory mode).
    fn constraint_count(&self, horizon: usize) -> usize {
        if self.mi.mode == MiMode::ModelFree {
            1
        } else {
            horizon
        }
    }

    pub fn lambdas(&self, horizon: usize) -> Result<Vec<f64>> {
        broadcast(
            &self.dual.lambdas,
            self.constraint_count(horizon),
            "dual.lambdas",
        )
    }

    pub fn epsilons(&self, horizon: usize) -> Result<Vec<f64>> {
        broadcast(
            &self.dual.epsilons,
            self.constraint_count(horizon),
            "dual.epsilons",
        )
    }
}

pub const PRESETS: [&str; 8] = [
    "vpn_constrained",
    "vpn_unconstrained",
    "particle_constrained",
    "particle_unconstrained",
    "snap_constrained",
    "snap_unconstrained",
    "customer_constrained",
    "customer_unconstrained",
];

/// Bundled training configurations, one constrained and one unconstrained per task.
pub fn preset(name: &str) -> Option<TrainConfig> {
    let (base, lambda) = match name.rsplit_once('_') {
        Some((b, "constrained")) => (b, true),
        Some((b, "unconstrained")) => (b, false),
        _ => return None,
    };
    let mut cfg = match base {
        "vpn" => TrainConfig {
            seed: 0,
            epochs: 5000,
            batch_size: 32,
            policy_steps: 1,
            deterministic: false,
            checkpoint_every: 1000,
            env: EnvConfig::Vpn(VpnEnv::default()),
            policy: NetConfig::new(&[256, 256], 3e-3).output_scale(0.01),
            baseline: NetConfig::new(&[64, 64], 3e-3),
            mi: MiConfig {
                mode: MiMode::ModelBased,
                estimator: EstimatorKind::Empirical,
                discriminator: NetConfig::new(&[64, 64], 3e-3),
                ..Default::default()
            },
            dual: DualConfig::default(),
            entropy: EntropyConfig::default(),
        },
        "particle" => TrainConfig {
            seed: 0,
            epochs: 4000,
            batch_size: 128,
            policy_steps: 1,
            deterministic: false,
            checkpoint_every: 1000,
            env: EnvConfig::Particle(ParticleEnv::default()),
            policy: NetConfig::new(&[256, 256], 3e-3).output_scale(0.01),
            baseline: NetConfig::new(&[64, 64], 3e-3),
            mi: MiConfig {
                mode: MiMode::ModelBased,
                estimator: EstimatorKind::Discriminator,
                discriminator: NetConfig::new(&[256, 256], 3e-3),
                ..Default::default()
            },
            dual: DualConfig::default(),
            entropy: EntropyConfig::default(),
        },
        "snap" => TrainConfig {
            seed: 0,
            epochs: 1000,
            batch_size: 128,
            policy_steps: 1,
            deterministic: false,
            checkpoint_every: 250,
            env: EnvConfig::Snap(SnapConfig {
                reward_unit: 1e8,
                ..Default::default()
            }),
            policy: NetConfig::new(&[256, 256], 1e-3).output_scale(0.01),
            baseline: NetConfig::new(&[64, 64], 1e-3),
            mi: MiConfig {
                mode: MiMode::ModelBased,
                estimator: EstimatorKind::Empirical,
                discriminator: NetConfig::new(&[64, 64], 1e-3),
                ..Default::default()
            },
            dual: DualConfig::default(),
            entropy: EntropyConfig::default(),
        },
        "customer" => TrainConfig {
            seed: 0,
            epochs: 5000,
            batch_size: 12,
            policy_steps: 1,
            deterministic: false,
            checkpoint_every: 1000,
            env: EnvConfig::Customer(CustomerServiceEnv::default()),
            policy: NetConfig::new(&[256, 256], 1e-4).output_scale(0.01),
            baseline: NetConfig::new(&[64, 64], 1e-4),
            mi: MiConfig {
                mode: MiMode::ModelBased,
                estimator: EstimatorKind::Discriminator,
                discriminator: NetConfig::new(&[64, 64], 1e-3),
                ..Default::default()
            },
            dual: DualConfig::default(),
            entropy: EntropyConfig::default(),
        },
        _ => return None,
    };
    if lambda {
        // Particle returns are O(100) at unit reward scale, so λ = 1 barely binds.
        cfg.dual.lambdas = vec![if base == "particle" { 1000.0 } else { 1.0 }];
    }
    if base == "vpn" {
        // Without the MI penalty, early commitment to a mirror is a plateau; a
        // slower anneal keeps exploring until the VPN purchase is found.
        cfg.entropy = if lambda {
            EntropyConfig {
                beta0: 0.5,
                anneal_end_fraction: 0.5,
            }
        } else {
            EntropyConfig {
                beta0: 0.1,
                anneal_end_fraction: 1.0,
            }
        };
    }
    Some(cfg)
}
