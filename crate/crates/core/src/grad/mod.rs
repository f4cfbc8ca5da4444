//! Policy-gradient estimators.
//!
//! All three gradients are score-function estimators, so each reduces to a
//! cotangent on the policy logits of every visited state followed by a single
//! batched backward pass. The logit-space score of action `a` is `e_a - π`.

mod baseline;

pub use baseline::{baseline_update, returns_and_advantages, BaselineParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Environment, FactoredState, PolicyParams, Trajectory};
use crate::mi::{TimestepCritic, TrajectoryCritic};
use crate::numerics::prob::log_softmax;
use crate::numerics::{backward_batch, Activations, ParamVector};
use crate::par;

use baseline::encode_states;

/// Default clip for importance weights.
pub const DEFAULT_WEIGHT_CLIP: f64 = 100.0;

/// Policy forward pass over every state of a batch, rows trajectory-major.
pub struct PolicyBatch {
    acts: Activations,
    pub log_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub horizon: usize,
    pub action_count: usize,
    pub batch_size: usize,
}

impl PolicyBatch {
    pub fn new(env: &dyn Environment, policy: &PolicyParams, batch: &[Trajectory]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::contract("gradient of an empty batch"));
        }
        policy.check_env(env)?;
        let horizon = batch[0].len();
        if batch.iter().any(|t| t.len() != horizon) {
            return Err(Error::contract(
                "trajectories of different lengths in one batch",
            ));
        }
        let (inputs, rows) = encode_states(env, batch);
        let acts = policy.forward_rows(&inputs, rows)?;
        let k = policy.spec.output_dim;
        let log_probs: Vec<f64> = acts.output().chunks(k).flat_map(log_softmax).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(PolicyBatch {
            acts,
            log_probs,
            probs,
            horizon,
            action_count: k,
            batch_size: batch.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.batch_size * self.horizon
    }

    fn row(&self, j: usize, t: usize) -> std::ops::Range<usize> {
        let r = j * self.horizon + t;
        r * self.action_count..(r + 1) * self.action_count
    }

    /// Adds `coef · (e_a - π)` at row `(j, t)`.
    fn add_score(&self, cot: &mut [f64], j: usize, t: usize, a: usize, coef: f64) {
        let range = self.row(j, t);
        for (c, p) in cot[range.clone()]
            .iter_mut()
            .zip(&self.probs[range.clone()])
        {
            *c -= coef * p;
        }
        cot[range.start + a] += coef;
    }

    /// Gradient of Σ_rows ⟨logits, cot⟩.
    pub fn backward(&self, policy: &PolicyParams, cot: &[f64]) -> Result<ParamVector> {
        let (g, _) = backward_batch(&policy.spec, &policy.params, &self.acts, cot)?;
        if !g.is_finite() {
            return Err(Error::divergence("non-finite policy gradient"));
        }
        Ok(g)
    }

    fn zero_cotangent(&self) -> Vec<f64> {
        vec![0.0; self.rows() * self.action_count]
    }
}

/// Cotangent of `scale · Σ A_t log q(a_t|s_t) + β · scale · Σ entropy` on the logits.
fn reinforce_cotangent(
    pb: &PolicyBatch,
    batch: &[Trajectory],
    advantages: &[f64],
    entropy_coef: f64,
    scale: f64,
) -> Vec<f64> {
    let mut cot = pb.zero_cotangent();
    for (j, tr) in batch.iter().enumerate() {
        for t in 0..pb.horizon {
            pb.add_score(
                &mut cot,
                j,
                t,
                tr.actions[t],
                scale * advantages[j * pb.horizon + t],
            );
            if entropy_coef != 0.0 {
                // ∂H/∂z_i = -π_i (log π_i + H)
                let range = pb.row(j, t);
                let (p, lp) = (&pb.probs[range.clone()], &pb.log_probs[range.clone()]);
                let h: f64 = -p.iter().zip(lp).map(|(p, l)| p * l).sum::<f64>();
                for ((c, p), l) in cot[range].iter_mut().zip(p).zip(lp) {
                    *c -= entropy_coef * scale * p * (l + h);
                }
            }
        }
    }
    cot
}

fn advantages(
    env: &dyn Environment,
    batch: &[Trajectory],
    baseline: &BaselineParams,
) -> Result<Vec<f64>> {
    let values = baseline.values(env, batch)?;
    Ok(batch
        .iter()
        .flat_map(Trajectory::returns_to_go)
        .zip(values)
        .map(|(g, v)| g - v)
        .collect())
}

/// REINFORCE with baseline plus an entropy bonus; an ascent direction for the
/// expected return.
pub fn reinforce_grad(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
    baseline: &BaselineParams,
    entropy_coef: f64,
) -> Result<ParamVector> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let adv = advantages(env, batch, baseline)?;
    let scale = 1.0 / pb.rows() as f64;
    pb.backward(
        policy,
        &reinforce_cotangent(&pb, batch, &adv, entropy_coef, scale),
    )
}

/// Like [`reinforce_grad`] but summed over timesteps: an estimate of the gradient of
/// the expected episode return plus `entropy_coef` times the summed entropy.
pub fn return_grad(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
    baseline: &BaselineParams,
    entropy_coef: f64,
) -> Result<ParamVector> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let adv = advantages(env, batch, baseline)?;
    let scale = 1.0 / pb.batch_size as f64;
    pb.backward(
        policy,
        &reinforce_cotangent(&pb, batch, &adv, entropy_coef, scale),
    )
}

/// Batch mean of `∇ log q(a_t|s_t)` over all steps.
pub fn mean_score(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
) -> Result<ParamVector> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let ones = vec![1.0; pb.rows()];
    pb.backward(
        policy,
        &reinforce_cotangent(&pb, batch, &ones, 0.0, 1.0 / pb.rows() as f64),
    )
}

/// `p(s'|a,s) / Σ_b q(b|s) p(s'|b,s)`.
pub fn importance_weight(
    env: &dyn Environment,
    policy: &PolicyParams,
    state: &FactoredState,
    action: usize,
    next: &FactoredState,
) -> Result<f64> {
    let q = policy.action_dist(env, state)?;
    let dens = successor_densities(env, state, next)?;
    Ok(weights_from(&q, &dens, state)?[action])
}

fn successor_densities(
    env: &dyn Environment,
    state: &FactoredState,
    next: &FactoredState,
) -> Result<Vec<f64>> {
    if !env.spec().has_exact_dynamics {
        return Err(env.unsupported("exact transition densities"));
    }
    (0..env.spec().action_count)
        .map(|a| env.transition_density(state, a, next))
        .collect()
}

fn weights_from(q: &[f64], dens: &[f64], state: &FactoredState) -> Result<Vec<f64>> {
    let denom: f64 = q.iter().zip(dens).map(|(q, p)| q * p).sum();
    if !(denom > 0.0) {
        return Err(Error::ImpossibleSuccessor(format!(
            "successor of {state:?} has zero probability under the policy mixture"
        )));
    }
    Ok(dens.iter().map(|p| p / denom).collect())
}

/// Importance-weight statistics over the realized actions of a batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub max: f64,
    /// `(Σw)² / Σw²` over the realized weights.
    pub ess: f64,
    pub count: usize,
    /// Weights (over all actions) that hit the clip.
    pub clipped: usize,
}

/// Logit cotangent of `log Σ_a q(a|s_t) p(s_{t+1}|a, s_t)` for every step with a
/// successor: `q ⊙ w - π`, where `w` are the clipped importance weights.
///
/// This is the exact score of the state transition under the policy mixture, i.e.
/// the expected weighted action score over all actions rather than only the one taken.
fn history_scores(
    env: &dyn Environment,
    pb: &PolicyBatch,
    batch: &[Trajectory],
    clip: f64,
) -> Result<(Vec<f64>, WeightStats)> {
    let k = pb.action_count;
    let steps = pb.horizon.saturating_sub(1);
    let per_traj = par::map_range(batch.len(), |j| -> Result<(Vec<f64>, Vec<f64>, usize)> {
        let tr = &batch[j];
        let mut h = vec![0.0; pb.horizon * k];
        let mut realized = Vec::with_capacity(steps);
        let mut clipped = 0;
        for t in 0..steps {
            let state = tr.state(t);
            let dens = successor_densities(env, &state, &tr.state(t + 1))?;
            let range = pb.row(j, t);
            let q = &pb.probs[range];
            let mut w = weights_from(q, &dens, &state)?;
            realized.push(w[tr.actions[t]]);
            for wi in &mut w {
                if *wi > clip {
                    *wi = clip;
                    clipped += 1;
                }
            }
            for i in 0..k {
                h[t * k + i] = q[i] * w[i] - q[i];
            }
        }
        Ok((h, realized, clipped))
    });
    let mut h = Vec::with_capacity(pb.rows() * k);
    let mut realized = Vec::with_capacity(batch.len() * steps);
    let mut clipped = 0;
    for r in per_traj {
        let (hj, wj, c) = r?;
        h.extend(hj);
        realized.extend(wj);
        clipped += c;
    }
    let sum = par::tree_sum(&realized);
    let sq: Vec<f64> = realized.iter().map(|w| w * w).collect();
    let sum_sq = par::tree_sum(&sq);
    let stats = WeightStats {
        max: realized.iter().copied().fold(0.0, f64::max),
        ess: if sum_sq > 0.0 {
            sum * sum / sum_sq
        } else {
            0.0
        },
        count: realized.len(),
        clipped,
    };
    Ok((h, stats))
}

fn collect_ratios(
    critic: &dyn TimestepCritic,
    batch: &[Trajectory],
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let ratios: Vec<Vec<f64>> = (0..horizon)
        .map(|t| critic.log_ratios(batch, t))
        .collect::<Result<_>>()?;
    if ratios.iter().flatten().any(|r| !r.is_finite()) {
        return Err(Error::divergence("non-finite MI log-ratio"));
    }
    Ok(ratios)
}

/// Cotangent of `(1/B) Σ_j Σ_t λ_t R_t (score(a_t) + Σ_{t'<t} h_{t'})`.
fn model_based_cotangent(
    pb: &PolicyBatch,
    batch: &[Trajectory],
    ratios: &[Vec<f64>],
    h: &[f64],
    lambdas: &[f64],
) -> Vec<f64> {
    let mut cot = pb.zero_cotangent();
    let k = pb.action_count;
    let scale = 1.0 / pb.batch_size as f64;
    for (j, tr) in batch.iter().enumerate() {
        // weight on h_{t'} is the sum of λ_t R_t over later steps
        let mut later = 0.0;
        for t in (0..pb.horizon).rev() {
            let lr = lambdas[t] * ratios[t][j];
            if later != 0.0 {
                let r = j * pb.horizon + t;
                for i in 0..k {
                    cot[r * k + i] += scale * later * h[r * k + i];
                }
            }
            if lr != 0.0 {
                pb.add_score(&mut cot, j, t, tr.actions[t], scale * lr);
            }
            later += lr;
        }
    }
    cot
}

/// Model-based gradient of `I(a_t; u_t)` for every `t`, using the critic's log
/// ratios and the environment's exact dynamics.
pub fn model_based_mi_grad(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
    critic: &dyn TimestepCritic,
    clip: f64,
) -> Result<(Vec<ParamVector>, WeightStats)> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let ratios = collect_ratios(critic, batch, pb.horizon)?;
    let (h, stats) = history_scores(env, &pb, batch, clip)?;
    let grads = (0..pb.horizon)
        .map(|t| {
            let mut lambdas = vec![0.0; pb.horizon];
            lambdas[t] = 1.0;
            pb.backward(
                policy,
                &model_based_cotangent(&pb, batch, &ratios, &h, &lambdas),
            )
        })
        .collect::<Result<_>>()?;
    Ok((grads, stats))
}

/// Score-function gradient of `I(τ_a, τ_x; τ_u)`.
pub fn model_free_traj_mi_grad(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
    critic: &dyn TrajectoryCritic,
) -> Result<ParamVector> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let ratios = critic.log_ratios(batch)?;
    pb.backward(policy, &model_free_cotangent(&pb, batch, &ratios, 1.0)?)
}

fn model_free_cotangent(
    pb: &PolicyBatch,
    batch: &[Trajectory],
    ratios: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if ratios.iter().any(|r| !r.is_finite()) {
        return Err(Error::divergence("non-finite trajectory log-ratio"));
    }
    let mut cot = pb.zero_cotangent();
    let scale = lambda / pb.batch_size as f64;
    for (j, tr) in batch.iter().enumerate() {
        for t in 0..pb.horizon {
            pb.add_score(&mut cot, j, t, tr.actions[t], scale * ratios[j]);
        }
    }
    Ok(cot)
}

/// How the MI penalty enters the policy gradient.
pub enum MiTerm<'a> {
    None,
    /// Per-timestep constraints with multipliers `λ_t`.
    PerTimestep {
        critic: &'a dyn TimestepCritic,
        lambdas: &'a [f64],
        clip: f64,
    },
    /// One trajectory-level constraint.
    Trajectory {
        critic: &'a dyn TrajectoryCritic,
        lambda: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradDiagnostics {
    pub policy_grad_norm: f64,
    pub mi_grad_norm: f64,
    pub weights: Option<WeightStats>,
}

/// Gradients for one policy step.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    /// Ascent direction of episode return plus entropy bonus, as in [`return_grad`].
    pub policy_grad: ParamVector,
    /// Ascent direction of the multiplier-weighted MI penalty.
    pub mi_grad: ParamVector,
    pub diagnostics: GradDiagnostics,
}

impl GradientBundle {
    /// Loss gradient for a minimizing optimizer: `-(policy_grad - mi_grad)`.
    pub fn descent_direction(&self) -> ParamVector {
        let mut g = self.mi_grad.clone();
        g.axpy(-1.0, &self.policy_grad);
        g
    }
}

/// Gradients of the Lagrangian `J - Σ λ_t I_t` for one batch: the episode-return
/// gradient of [`return_grad`] and the multiplier-weighted MI gradient. With every
/// multiplier at zero the MI term is skipped, so the result equals a pure REINFORCE
/// step.
pub fn gradient_bundle(
    env: &dyn Environment,
    batch: &[Trajectory],
    policy: &PolicyParams,
    baseline: &BaselineParams,
    entropy_coef: f64,
    mi: MiTerm<'_>,
) -> Result<GradientBundle> {
    let pb = PolicyBatch::new(env, policy, batch)?;
    let adv = advantages(env, batch, baseline)?;
    let scale = 1.0 / pb.batch_size as f64;
    let policy_grad = pb.backward(
        policy,
        &reinforce_cotangent(&pb, batch, &adv, entropy_coef, scale),
    )?;
    let mut weights = None;
    let mi_grad = match mi {
        MiTerm::PerTimestep {
            critic,
            lambdas,
            clip,
        } if lambdas.iter().any(|l| *l != 0.0) => {
            if lambdas.len() != pb.horizon {
                return Err(Error::contract(format!(
                    "{} multipliers for horizon {}",
                    lambdas.len(),
                    pb.horizon
                )));
            }
            let ratios = collect_ratios(critic, batch, pb.horizon)?;
            let (h, stats) = history_scores(env, &pb, batch, clip)?;
            weights = Some(stats);
            pb.backward(
                policy,
                &model_based_cotangent(&pb, batch, &ratios, &h, lambdas),
            )?
        }
        MiTerm::Trajectory { critic, lambda } if lambda != 0.0 => {
            let ratios = critic.log_ratios(batch)?;
            pb.backward(policy, &model_free_cotangent(&pb, batch, &ratios, lambda)?)?
        }
        _ => policy_grad.zeros_like(),
    };
    let diagnostics = GradDiagnostics {
        policy_grad_norm: policy_grad.norm(),
        mi_grad_norm: mi_grad.norm(),
        weights,
    };
    Ok(GradientBundle {
        policy_grad,
        mi_grad,
        diagnostics,
    })
}
