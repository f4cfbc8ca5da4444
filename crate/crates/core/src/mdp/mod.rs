//! Factored-state episodic MDPs: the environment interface, policies, rollouts and
//! the exact enumeration oracle for finite environments.

mod dump;
pub mod enumerate;
mod policy;
mod rollout;

pub use dump::{read_trajectories_csv, write_trajectories_csv};
pub use enumerate::{
    count_trajectories, enumerate_trajectories, exact_expected_return, exact_mi_quantities,
    exact_mi_quantities_capped, exact_timestep_mi, ExactMi, DEFAULT_ENUMERATION_CAP,
};
pub use policy::PolicyParams;
pub use rollout::{sample_batch, sample_trajectory};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Stream;

/// State split into non-sensitive `x` and sensitive `u`. A categorical `u` is stored
/// as its index in a one-element vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredState {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl FactoredState {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Self {
        FactoredState { x, u }
    }

    /// Index of a categorical sensitive variable.
    pub fn u_index(&self) -> usize {
        self.u[0] as usize
    }

    /// Exact bit-level key, used for tabulating finite environments.
    pub fn key(&self) -> Vec<u64> {
        self.x.iter().chain(&self.u).map(|v| v.to_bits()).collect()
    }

    pub fn u_key(&self) -> Vec<u64> {
        self.u.iter().map(|v| v.to_bits()).collect()
    }

    pub fn x_key(&self) -> Vec<u64> {
        self.x.iter().map(|v| v.to_bits()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UDomain {
    /// `u ∈ {0, .., n-1}`
    Categorical(usize),
    /// Real-valued `u`, possibly unbounded.
    Interval { lo: f64, hi: f64 },
}

impl UDomain {
    pub fn categories(&self) -> Option<usize> {
        match self {
            UDomain::Categorical(n) => Some(*n),
            UDomain::Interval { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub horizon: usize,
    pub action_count: usize,
    pub x_dim: usize,
    pub u_dim: usize,
    pub u_domain: UDomain,
    /// `u` never changes within an episode.
    pub u_constant: bool,
    pub has_exact_dynamics: bool,
    /// State and action spaces are enumerable.
    pub is_finite: bool,
    /// Length of the policy input produced by [`Environment::encode`].
    pub input_dim: usize,
}

/// One outcome of a finite transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next: FactoredState,
    pub prob: f64,
    pub reward: f64,
}

/// An episodic environment with factored state.
///
/// Rewards are returned together with the successor so each environment can decide
/// whether the reward reads the pre- or post-transition state.
pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    fn reset(&self, rng: &mut Stream) -> FactoredState;

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)>;

    /// Policy input for `state`, appended to `out`.
    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>);

    /// Mass (finite envs) or density (continuous envs) of `next` given `(state, action)`.
    fn transition_density(
        &self,
        _state: &FactoredState,
        _action: usize,
        _next: &FactoredState,
    ) -> Result<f64> {
        Err(self.unsupported("exact transition densities"))
    }

    /// Initial distribution of a finite environment.
    fn initial_support(&self) -> Result<Vec<(FactoredState, f64)>> {
        Err(self.unsupported("enumeration"))
    }

    /// All outcomes of `(state, action)` in a finite environment.
    fn transitions(&self, _state: &FactoredState, _action: usize) -> Result<Vec<Transition>> {
        Err(self.unsupported("enumeration"))
    }

    fn unsupported(&self, what: &str) -> Error {
        Error::Capability {
            env: self.spec().name.clone(),
            what: what.to_string(),
        }
    }

    fn check_action(&self, action: usize) -> Result<()> {
        let n = self.spec().action_count;
        if action >= n {
            return Err(Error::contract(format!(
                "action {action} out of range for `{}` ({n} actions)",
                self.spec().name
            )));
        }
        Ok(())
    }
}

/// One episode of fixed length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<Vec<f64>>,
    pub us: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Policy log-probabilities of the taken actions, recorded while sampling.
    pub log_probs: Vec<f64>,
    /// State reached after the last action.
    pub terminal: FactoredState,
}

impl Trajectory {
    pub fn with_capacity(horizon: usize, terminal: FactoredState) -> Self {
        Trajectory {
            xs: Vec::with_capacity(horizon),
            us: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            log_probs: Vec::with_capacity(horizon),
            terminal,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn state(&self, t: usize) -> FactoredState {
        FactoredState::new(self.xs[t].clone(), self.us[t].clone())
    }

    /// State after action `t` (the terminal state for the last step).
    pub fn next_state(&self, t: usize) -> FactoredState {
        if t + 1 < self.len() {
            self.state(t + 1)
        } else {
            self.terminal.clone()
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Undiscounted return-to-go at every step.
    pub fn returns_to_go(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut acc = 0.0;
        for t in (0..self.len()).rev() {
            acc += self.rewards[t];
            out[t] = acc;
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let n = self.actions.len();
        if self.xs.len() != n
            || self.us.len() != n
            || self.rewards.len() != n
            || self.log_probs.len() != n
        {
            return Err(Error::contract("trajectory sequences differ in length"));
        }
        if self
            .rewards
            .iter()
            .chain(&self.log_probs)
            .any(|v| !v.is_finite())
        {
            return Err(Error::divergence(
                "trajectory holds non-finite rewards or log-probabilities",
            ));
        }
        Ok(())
    }
}

/// Mean and standard error of episode returns.
pub fn mean_return(batch: &[Trajectory]) -> (f64, f64) {
    let n = batch.len() as f64;
    if batch.is_empty() {
        return (0.0, 0.0);
    }
    let totals: Vec<f64> = batch.iter().map(Trajectory::total_reward).collect();
    let mean = totals.iter().sum::<f64>() / n;
    if batch.len() < 2 {
        return (mean, 0.0);
    }
    let var = totals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
