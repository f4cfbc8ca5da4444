use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, FactoredState, UDomain};
use crate::numerics::prob::gaussian_logpdf;
use crate::numerics::rng::Stream;

/// Point mass on the plane pushed by unit forces in the four cardinal directions.
///
/// State is `x = [x, ẋ, u̇]`, `u = [u]`: only the `u` position is sensitive.
/// Integration is symplectic Euler with unit mass and `dt = 1`; the reward is the
/// negative squared distance from the origin after the move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleEnv {
    pub force_noise_sigma: f64,
    pub init_sigma: f64,
    pub horizon: usize,
    pub reward_scale: f64,
    #[serde(skip)]
    spec: Option<EnvSpec>,
}

impl Default for ParticleEnv {
    fn default() -> Self {
        ParticleEnv {
            force_noise_sigma: 0.5,
            init_sigma: 1.0,
            horizon: 10,
            reward_scale: 1.0,
            spec: None,
        }
        .finish()
    }
}

/// Unit force of each action on (x, u): east, west, north, south.
const FORCES: [(f64, f64); 4] = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];

impl ParticleEnv {
    pub fn finish(mut self) -> Self {
        self.spec = Some(EnvSpec {
            name: "particle".into(),
            horizon: self.horizon,
            action_count: 4,
            x_dim: 3,
            u_dim: 1,
            u_domain: UDomain::Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
            u_constant: false,
            has_exact_dynamics: self.force_noise_sigma > 0.0,
            is_finite: false,
            input_dim: 4,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        if !(self.force_noise_sigma >= 0.0 && self.init_sigma >= 0.0 && self.reward_scale > 0.0) {
            return Err(Error::config(
                "env",
                "noise scales must be non-negative and reward_scale positive",
            ));
        }
        Ok(())
    }

    fn integrate(
        &self,
        state: &FactoredState,
        action: usize,
        noise: (f64, f64),
    ) -> (FactoredState, f64) {
        let (fx, fu) = FORCES[action];
        let vx = state.x[1] + fx + noise.0;
        let vu = state.x[2] + fu + noise.1;
        let px = state.x[0] + vx;
        let pu = state.u[0] + vu;
        let reward = -self.reward_scale * (px * px + pu * pu);
        (FactoredState::new(vec![px, vx, vu], vec![pu]), reward)
    }
}

impl Environment for ParticleEnv {
    fn spec(&self) -> &EnvSpec {
        self.spec
            .as_ref()
            .expect("ParticleEnv::finish sets the spec")
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let px: f64 = rng.sample(StandardNormal);
        let pu: f64 = rng.sample(StandardNormal);
        FactoredState::new(
            vec![self.init_sigma * px, 0.0, 0.0],
            vec![self.init_sigma * pu],
        )
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        self.check_action(action)?;
        let nx: f64 = rng.sample(StandardNormal);
        let nu: f64 = rng.sample(StandardNormal);
        let s = self.force_noise_sigma;
        Ok(self.integrate(state, action, (s * nx, s * nu)))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        out.extend_from_slice(&[state.x[0], state.x[1], state.u[0], state.x[2]]);
    }

    /// Density of the velocity increments; positions must follow the integrator.
    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        self.check_action(action)?;
        if self.force_noise_sigma <= 0.0 {
            return Err(self.unsupported("transition densities without force noise"));
        }
        let (mean, _) = self.integrate(state, action, (0.0, 0.0));
        let consistent =
            |pos: f64, prev: f64, vel: f64| (pos - (prev + vel)).abs() <= 1e-9 * (1.0 + pos.abs());
        if !consistent(next.x[0], state.x[0], next.x[1])
            || !consistent(next.u[0], state.u[0], next.x[2])
        {
            return Ok(0.0);
        }
        let var = self.force_noise_sigma * self.force_noise_sigma;
        let lx = gaussian_logpdf(next.x[1], mean.x[1], var)?;
        let lu = gaussian_logpdf(next.x[2], mean.x[2], var)?;
        Ok((lx + lu).exp())
    }
}
