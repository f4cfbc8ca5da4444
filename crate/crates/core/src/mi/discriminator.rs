use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::numerics::prob::{clamp_log_prob, log_softmax, softmax, VARIANCE_FLOOR};
use crate::numerics::{
    backward_batch, forward_batch, Activation, AdamConfig, AdamState, MlpSpec, ParamVector,
};
use crate::par;

use super::{HeadKind, MarginalModel, TimestepCritic, TrajectoryCritic};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Raw log-variance outputs are clipped here before exponentiation.
const LOG_VAR_CLIP: f64 = 30.0;

fn gaussian_var(raw: f64) -> f64 {
    raw.clamp(-LOG_VAR_CLIP, LOG_VAR_CLIP).exp() + VARIANCE_FLOOR
}

/// `log q(u | out)` for one head block.
fn head_log_prob(kind: HeadKind, out: &[f64], u: f64) -> f64 {
    match kind {
        HeadKind::Categorical(_) => log_softmax(out)[u as usize],
        HeadKind::Gaussian => {
            let var = gaussian_var(out[1]);
            let d = u - out[0];
            -0.5 * (LN_2PI + var.ln() + d * d / var)
        }
    }
}

/// Adds `weight · ∂(-log q(u | out))/∂out` to `grad` and returns `-log q`.
fn head_nll_grad(kind: HeadKind, out: &[f64], u: f64, weight: f64, grad: &mut [f64]) -> f64 {
    match kind {
        HeadKind::Categorical(_) => {
            let p = softmax(out);
            let k = u as usize;
            for (g, pi) in grad.iter_mut().zip(&p) {
                *g += weight * pi;
            }
            grad[k] -= weight;
            -log_softmax(out)[k]
        }
        HeadKind::Gaussian => {
            let var = gaussian_var(out[1]);
            let d = u - out[0];
            grad[0] -= weight * d / var;
            if out[1].abs() < LOG_VAR_CLIP {
                grad[1] += weight * 0.5 * (1.0 - d * d / var) * (var - VARIANCE_FLOOR) / var;
            }
            0.5 * (LN_2PI + var.ln() + d * d / var)
        }
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::divergence(format!("non-finite {what}")))
    }
}

/// Per-timestep discriminators `q_ψt(u_t | a_t)`.
///
/// The input is the one-hot action, so each network only ever sees `|A|` distinct
/// rows; training and evaluation run on those rows and weight them by counts.
#[derive(Clone, Debug)]
pub struct TimestepDiscriminator {
    pub kind: HeadKind,
    pub action_count: usize,
    pub spec: MlpSpec,
    pub params: Vec<ParamVector>,
    pub adam: Vec<AdamState>,
}

impl TimestepDiscriminator {
    pub fn new<R: Rng + ?Sized>(
        action_count: usize,
        horizon: usize,
        kind: HeadKind,
        hidden: &[usize],
        activation: Activation,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Self {
        let spec = MlpSpec::new(action_count, hidden, kind.output_dim(), activation);
        let params: Vec<_> = (0..horizon)
            .map(|_| ParamVector::init(&spec, rng))
            .collect();
        let adam = params
            .iter()
            .map(|p| AdamState::for_params(p, adam))
            .collect();
        TimestepDiscriminator {
            kind,
            action_count,
            spec,
            params,
            adam,
        }
    }

    pub fn horizon(&self) -> usize {
        self.params.len()
    }

    fn identity_rows(&self) -> Vec<f64> {
        let n = self.action_count;
        (0..n * n)
            .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
            .collect()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.horizon() {
            return Err(Error::contract(format!(
                "timestep {t} beyond horizon {}",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Head output for every action at timestep `t`.
    pub fn head_outputs(&self, t: usize) -> Result<Vec<Vec<f64>>> {
        self.check_t(t)?;
        let acts = forward_batch(
            &self.spec,
            &self.params[t],
            &self.identity_rows(),
            self.action_count,
        )?;
        Ok(acts
            .output()
            .chunks(self.kind.output_dim())
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// `q(u | a)` over categories; categorical heads only.
    pub fn conditional(&self, t: usize, action: usize) -> Result<Vec<f64>> {
        if !matches!(self.kind, HeadKind::Categorical(_)) {
            return Err(Error::contract(
                "conditional tables need a categorical head",
            ));
        }
        Ok(softmax(&self.head_outputs(t)?[action]))
    }

    /// One Adam step on the mean negative log-likelihood of `(u_t, a_t)` in `batch`.
    /// Returns the loss before the step.
    pub fn train_step(&mut self, batch: &[Trajectory], t: usize) -> Result<f64> {
        self.check_t(t)?;
        if batch.is_empty() {
            return Err(Error::Estimation(
                "discriminator step on an empty batch".into(),
            ));
        }
        let rows = self.identity_rows();
        let acts = forward_batch(&self.spec, &self.params[t], &rows, self.action_count)?;
        let d = self.kind.output_dim();
        let outs = acts.output();
        let mut cot = vec![0.0; outs.len()];
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for tr in batch {
            let a = tr.actions[t];
            loss += w * head_nll_grad(
                self.kind,
                &outs[a * d..(a + 1) * d],
                tr.us[t][0],
                w,
                &mut cot[a * d..(a + 1) * d],
            );
        }
        check_finite(loss, "discriminator loss")?;
        let (grad, _) = backward_batch(&self.spec, &self.params[t], &acts, &cot)?;
        self.adam[t].step(&mut self.params[t], &grad)?;
        Ok(loss)
    }

    /// `log q(u_t | a_t)` for every trajectory, clamped at the log-probability floor.
    pub fn log_probs(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>> {
        let outs = self.head_outputs(t)?;
        batch
            .iter()
            .map(|tr| {
                check_finite(
                    clamp_log_prob(head_log_prob(self.kind, &outs[tr.actions[t]], tr.us[t][0])),
                    "discriminator log-probability",
                )
            })
            .collect()
    }
}

/// One likelihood step for timestep `t`; returns the mean negative log-likelihood.
pub fn train_timestep_discriminator(
    batch: &[Trajectory],
    disc: &mut TimestepDiscriminator,
    t: usize,
) -> Result<f64> {
    disc.train_step(batch, t)
}

/// Log ratio `log q_ψ(u_t|a_t) - log p(u_t)` from a discriminator and a marginal.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorCritic<'a> {
    pub disc: &'a TimestepDiscriminator,
    pub marginal: &'a MarginalModel,
}

impl TimestepCritic for DiscriminatorCritic<'_> {
    fn log_ratios(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>> {
        let lq = self.disc.log_probs(batch, t)?;
        batch
            .iter()
            .zip(lq)
            .map(|(tr, l)| {
                check_finite(
                    l - self.marginal.log_prob(t, tr.us[t][0])?,
                    "discriminator log-ratio",
                )
            })
            .collect()
    }
}

/// Monte-Carlo `I(a_t; u_t)` from a discriminator and marginal.
pub fn mi_from_discriminator(
    batch: &[Trajectory],
    disc: &TimestepDiscriminator,
    marginal: &MarginalModel,
    t: usize,
) -> Result<f64> {
    DiscriminatorCritic { disc, marginal }.estimate(batch, t)
}

/// Trajectory-level discriminator `q_ψ(τ_u | τ_a, τ_x)`.
///
/// The input is the one-hot actions followed by the standardized `x` sequence.
/// With constant `u` the head predicts the single value of `u`; otherwise it has one
/// block per timestep and the prediction factorizes over time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryDiscriminator {
    pub kind: HeadKind,
    pub blocks: usize,
    pub action_count: usize,
    pub horizon: usize,
    pub x_dim: usize,
    #[serde(skip)]
    pub spec: Option<MlpSpec>,
    #[serde(skip)]
    pub params: Option<ParamVector>,
    #[serde(skip)]
    pub adam: Option<AdamState>,
    /// Per-input shift and scale, fixed from the first training batch.
    pub norm: Option<(Vec<f64>, Vec<f64>)>,
}

impl TrajectoryDiscriminator {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        action_count: usize,
        horizon: usize,
        x_dim: usize,
        u_constant: bool,
        kind: HeadKind,
        hidden: &[usize],
        activation: Activation,
        adam: AdamConfig,
        rng: &mut R,
    ) -> Self {
        let blocks = if u_constant { 1 } else { horizon };
        let spec = MlpSpec::new(
            horizon * (action_count + x_dim),
            hidden,
            blocks * kind.output_dim(),
            activation,
        );
        let params = ParamVector::init(&spec, rng);
        let adam = AdamState::for_params(&params, adam);
        TrajectoryDiscriminator {
            kind,
            blocks,
            action_count,
            horizon,
            x_dim,
            spec: Some(spec),
            params: Some(params),
            adam: Some(adam),
            norm: None,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        self.spec.as_ref().expect("constructed with a network")
    }

    pub fn params(&self) -> &ParamVector {
        self.params.as_ref().expect("constructed with a network")
    }

    pub fn input_dim(&self) -> usize {
        self.horizon * (self.action_count + self.x_dim)
    }

    fn raw_inputs(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        let width = self.input_dim();
        let mut rows = Vec::with_capacity(batch.len() * width);
        for tr in batch {
            if tr.len() != self.horizon {
                return Err(Error::contract(format!(
                    "trajectory of length {} for horizon {}",
                    tr.len(),
                    self.horizon
                )));
            }
            for &a in &tr.actions {
                rows.extend((0..self.action_count).map(|i| if i == a { 1.0 } else { 0.0 }));
            }
            for x in &tr.xs {
                rows.extend_from_slice(x);
            }
        }
        Ok(rows)
    }

    fn set_norm(&mut self, rows: &[f64], n: usize) {
        let width = self.input_dim();
        let mut shift = vec![0.0; width];
        let mut scale = vec![1.0; width];
        let off = self.horizon * self.action_count;
        for j in off..width {
            let mean = (0..n).map(|i| rows[i * width + j]).sum::<f64>() / n as f64;
            let var = (0..n)
                .map(|i| (rows[i * width + j] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            shift[j] = mean;
            scale[j] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
        self.norm = Some((shift, scale));
    }

    fn inputs(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        let mut rows = self.raw_inputs(batch)?;
        if let Some((shift, scale)) = &self.norm {
            for row in rows.chunks_mut(self.input_dim()) {
                for ((v, s), c) in row.iter_mut().zip(shift).zip(scale) {
                    *v = (*v - s) * c;
                }
            }
        }
        Ok(rows)
    }

    fn targets(&self, tr: &Trajectory) -> Vec<f64> {
        (0..self.blocks).map(|b| tr.us[b][0]).collect()
    }

    /// One Adam step on the mean negative log-likelihood of `τ_u`. Returns the loss
    /// before the step.
    pub fn train_step(&mut self, batch: &[Trajectory]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Estimation(
                "discriminator step on an empty batch".into(),
            ));
        }
        if self.norm.is_none() {
            let raw = self.raw_inputs(batch)?;
            self.set_norm(&raw, batch.len());
        }
        let inputs = self.inputs(batch)?;
        let spec = self.spec().clone();
        let acts = forward_batch(&spec, self.params(), &inputs, batch.len())?;
        let d = self.kind.output_dim();
        let width = self.blocks * d;
        let w = 1.0 / batch.len() as f64;
        let mut cot = vec![0.0; batch.len() * width];
        let mut loss = 0.0;
        for (j, tr) in batch.iter().enumerate() {
            let out = &acts.output()[j * width..(j + 1) * width];
            for (b, u) in self.targets(tr).into_iter().enumerate() {
                let r = j * width + b * d;
                loss += w * head_nll_grad(
                    self.kind,
                    &out[b * d..(b + 1) * d],
                    u,
                    w,
                    &mut cot[r..r + d],
                );
            }
        }
        check_finite(loss, "trajectory discriminator loss")?;
        let (grad, _) = backward_batch(&spec, self.params(), &acts, &cot)?;
        let params = self.params.as_mut().expect("constructed with a network");
        self.adam
            .as_mut()
            .expect("constructed with a network")
            .step(params, &grad)?;
        Ok(loss)
    }

    /// `log q(τ_u | τ_a, τ_x)` per trajectory, each block clamped at the floor.
    pub fn log_probs(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        let inputs = self.inputs(batch)?;
        let acts = forward_batch(self.spec(), self.params(), &inputs, batch.len())?;
        let d = self.kind.output_dim();
        let width = self.blocks * d;
        let out = acts.output();
        let lps = par::map_range(batch.len(), |j| {
            self.targets(&batch[j])
                .into_iter()
                .enumerate()
                .map(|(b, u)| {
                    clamp_log_prob(head_log_prob(
                        self.kind,
                        &out[j * width + b * d..j * width + (b + 1) * d],
                        u,
                    ))
                })
                .sum::<f64>()
        });
        lps.into_iter()
            .map(|l| check_finite(l, "trajectory log-probability"))
            .collect()
    }

    /// Mean negative log-likelihood without a parameter update.
    pub fn loss(&self, batch: &[Trajectory]) -> Result<f64> {
        let lps = self.log_probs(batch)?;
        Ok(-par::tree_sum(&lps) / batch.len().max(1) as f64)
    }

    pub fn set_params(&mut self, params: ParamVector, adam: AdamState) -> Result<()> {
        params.check_spec(self.spec())?;
        self.params = Some(params);
        self.adam = Some(adam);
        Ok(())
    }

    pub fn adam(&self) -> &AdamState {
        self.adam.as_ref().expect("constructed with a network")
    }
}

/// One likelihood step on the trajectory discriminator.
pub fn train_trajectory_discriminator(
    batch: &[Trajectory],
    disc: &mut TrajectoryDiscriminator,
) -> Result<f64> {
    disc.train_step(batch)
}

/// `log q_ψ(τ_u|τ_a,τ_x) - log p(τ_u)` with the marginal factorized like the head.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryDiscriminatorCritic<'a> {
    pub disc: &'a TrajectoryDiscriminator,
    pub marginal: &'a MarginalModel,
}

impl TrajectoryCritic for TrajectoryDiscriminatorCritic<'_> {
    fn log_ratios(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        let lq = self.disc.log_probs(batch)?;
        batch
            .iter()
            .zip(lq)
            .map(|(tr, l)| {
                let mut lp = 0.0;
                for b in 0..self.disc.blocks {
                    lp += self.marginal.log_prob(b, tr.us[b][0])?;
                }
                check_finite(l - lp, "trajectory log-ratio")
            })
            .collect()
    }
}
