use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, FactoredState, Transition, UDomain};
use crate::numerics::prob::gaussian_logpdf;
use crate::numerics::rng::Stream;

/// Action 0 moves the service center down by one, action 1 moves it up.
fn shift(action: usize) -> f64 {
    if action == 0 {
        -1.0
    } else {
        1.0
    }
}

fn one_hot_u(u: usize, out: &mut Vec<f64>) {
    out.extend([(u == 0) as u8 as f64, (u == 1) as u8 as f64]);
}

/// Goods-delivery task with a binary protected group.
///
/// The client position `x` follows a Gaussian random walk with group drift
/// `u·alpha`; the agent moves its service center `w` by ±1 each step and pays the
/// distance between the client and the moved center. State is `x = [pos, w]`,
/// `u = [group]`. With `alpha = 0` the group only enters through the first position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomerServiceEnv {
    pub walk_sigma: f64,
    pub init_sigma: f64,
    pub init_separation: f64,
    pub alpha: f64,
    pub horizon: usize,
    #[serde(skip)]
    spec: Option<EnvSpec>,
}

impl Default for CustomerServiceEnv {
    fn default() -> Self {
        CustomerServiceEnv {
            walk_sigma: 0.5,
            init_sigma: 0.5f64.sqrt(),
            init_separation: 2.0,
            alpha: 0.0,
            horizon: 6,
            spec: None,
        }
        .finish()
    }
}

impl CustomerServiceEnv {
    pub fn drifting(alpha: f64) -> Self {
        CustomerServiceEnv {
            alpha,
            ..Default::default()
        }
        .finish()
    }

    pub fn finish(mut self) -> Self {
        self.spec = Some(EnvSpec {
            name: "customer".into(),
            horizon: self.horizon,
            action_count: 2,
            x_dim: 2,
            u_dim: 1,
            u_domain: UDomain::Categorical(2),
            u_constant: true,
            has_exact_dynamics: self.walk_sigma > 0.0,
            is_finite: false,
            input_dim: 4,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        if !(self.walk_sigma >= 0.0 && self.init_sigma >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("env", "noise scales must be non-negative"));
        }
        Ok(())
    }

    fn drift_mean(&self, state: &FactoredState) -> f64 {
        state.x[0] + state.u[0] * self.alpha
    }
}

impl Environment for CustomerServiceEnv {
    fn spec(&self) -> &EnvSpec {
        self.spec
            .as_ref()
            .expect("CustomerServiceEnv::finish sets the spec")
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let u = rng.random_range(0..2usize) as f64;
        let z: f64 = rng.sample(StandardNormal);
        FactoredState::new(
            vec![self.init_separation * u + self.init_sigma * z, 0.0],
            vec![u],
        )
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        self.check_action(action)?;
        let w = state.x[1] + shift(action);
        let reward = -(state.x[0] - w).abs();
        let z: f64 = rng.sample(StandardNormal);
        let pos = self.drift_mean(state) + self.walk_sigma * z;
        Ok((FactoredState::new(vec![pos, w], state.u.clone()), reward))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        out.extend([state.x[0], state.x[1]]);
        one_hot_u(state.u_index(), out);
    }

    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        self.check_action(action)?;
        if self.walk_sigma <= 0.0 {
            return Err(self.unsupported("transition densities without walk noise"));
        }
        if next.u != state.u || next.x[1] != state.x[1] + shift(action) {
            return Ok(0.0);
        }
        Ok(gaussian_logpdf(
            next.x[0],
            self.drift_mean(state),
            self.walk_sigma * self.walk_sigma,
        )?
        .exp())
    }
}

/// Customer-service task on an integer grid, small enough to enumerate.
///
/// Positions start at `separation·u + δ` and walk by `δ + drift·u` with
/// `δ ∈ {-1, 0, 1}` drawn with probabilities `(1/4, 1/2, 1/4)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CustomerGridEnv {
    pub separation: i64,
    pub drift: i64,
    spec: EnvSpec,
}

const STEPS: [(i64, f64); 3] = [(-1, 0.25), (0, 0.5), (1, 0.25)];

impl CustomerGridEnv {
    pub fn shielded(horizon: usize) -> Self {
        Self::new(horizon, 2, 0)
    }

    pub fn new(horizon: usize, separation: i64, drift: i64) -> Self {
        CustomerGridEnv {
            separation,
            drift,
            spec: EnvSpec {
                name: "customer_grid".into(),
                horizon,
                action_count: 2,
                x_dim: 2,
                u_dim: 1,
                u_domain: UDomain::Categorical(2),
                u_constant: true,
                has_exact_dynamics: true,
                is_finite: true,
                input_dim: 4,
            },
        }
    }
}

impl Environment for CustomerGridEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let u = rng.random_range(0..2usize);
        let pick: f64 = rng.random();
        let d = if pick < 0.25 {
            -1
        } else if pick < 0.75 {
            0
        } else {
            1
        };
        let pos = self.separation * u as i64 + d;
        FactoredState::new(vec![pos as f64, 0.0], vec![u as f64])
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        let outcomes = self.transitions(state, action)?;
        let probs: Vec<f64> = outcomes.iter().map(|t| t.prob).collect();
        let i = crate::numerics::prob::sample_index(&probs, rng);
        let t = &outcomes[i];
        Ok((t.next.clone(), t.reward))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        out.extend([state.x[0], state.x[1]]);
        one_hot_u(state.u_index(), out);
    }

    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        Ok(self
            .transitions(state, action)?
            .iter()
            .filter(|t| t.next == *next)
            .map(|t| t.prob)
            .sum())
    }

    fn initial_support(&self) -> Result<Vec<(FactoredState, f64)>> {
        let mut out = Vec::with_capacity(6);
        for u in 0..2i64 {
            for (d, p) in STEPS {
                let pos = self.separation * u + d;
                out.push((
                    FactoredState::new(vec![pos as f64, 0.0], vec![u as f64]),
                    0.5 * p,
                ));
            }
        }
        Ok(out)
    }

    fn transitions(&self, state: &FactoredState, action: usize) -> Result<Vec<Transition>> {
        self.check_action(action)?;
        let w = state.x[1] + shift(action);
        let reward = -(state.x[0] - w).abs();
        let base = state.x[0] as i64 + self.drift * state.u_index() as i64;
        Ok(STEPS
            .iter()
            .map(|&(d, prob)| Transition {
                next: FactoredState::new(vec![(base + d) as f64, w], state.u.clone()),
                prob,
                reward,
            })
            .collect())
    }
}
