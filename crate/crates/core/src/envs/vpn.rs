use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, FactoredState, Transition, UDomain};
use crate::numerics::rng::Stream;

/// Internet-connectivity task.
///
/// The owner has one of `n` IP addresses (`u`, fixed for the episode). Actions
/// `0..n` connect through a mirror, action `n` buys a VPN (`x` flips to 1).
/// Without VPN the owner's own mirror pays `r_star` and the others `r_minus`;
/// with VPN every mirror pays `r_vpn`. Buying pays nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpnEnv {
    pub n: usize,
    pub r_star: f64,
    pub r_minus: f64,
    pub r_vpn: f64,
    pub horizon: usize,
    #[serde(skip)]
    spec: Option<EnvSpec>,
}

impl Default for VpnEnv {
    fn default() -> Self {
        VpnEnv {
            n: 4,
            r_star: 1.0,
            r_minus: 0.5,
            r_vpn: 0.9,
            horizon: 10,
            spec: None,
        }
        .finish()
    }
}

impl VpnEnv {
    pub fn with_horizon(horizon: usize) -> Self {
        VpnEnv {
            horizon,
            ..Default::default()
        }
        .finish()
    }

    pub fn finish(mut self) -> Self {
        self.spec = Some(EnvSpec {
            name: "vpn".into(),
            horizon: self.horizon,
            action_count: self.n + 1,
            x_dim: 1,
            u_dim: 1,
            u_domain: UDomain::Categorical(self.n),
            u_constant: true,
            has_exact_dynamics: true,
            is_finite: true,
            input_dim: 1 + self.n,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.horizon == 0 {
            return Err(Error::config(
                "env.n",
                "mirror count and horizon must be positive",
            ));
        }
        if !(self.r_minus < self.r_vpn && self.r_vpn < self.r_star) {
            return Err(Error::config(
                "env",
                "rewards must satisfy r_minus < r_vpn < r_star",
            ));
        }
        Ok(())
    }

    pub fn buy_vpn_action(&self) -> usize {
        self.n
    }

    fn successor(&self, state: &FactoredState, action: usize) -> (FactoredState, f64) {
        let vpn = state.x[0] > 0.5;
        let u = state.u_index();
        if action == self.n {
            return (FactoredState::new(vec![1.0], state.u.clone()), 0.0);
        }
        let reward = if vpn {
            self.r_vpn
        } else if action == u {
            self.r_star
        } else {
            self.r_minus
        };
        (state.clone(), reward)
    }
}

impl Environment for VpnEnv {
    fn spec(&self) -> &EnvSpec {
        self.spec.as_ref().expect("VpnEnv::finish sets the spec")
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let u = rng.random_range(0..self.n);
        FactoredState::new(vec![0.0], vec![u as f64])
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        _rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        self.check_action(action)?;
        Ok(self.successor(state, action))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        out.push(state.x[0]);
        let u = state.u_index();
        out.extend((0..self.n).map(|i| if i == u { 1.0 } else { 0.0 }));
    }

    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        self.check_action(action)?;
        let (succ, _) = self.successor(state, action);
        Ok(if succ == *next { 1.0 } else { 0.0 })
    }

    fn initial_support(&self) -> Result<Vec<(FactoredState, f64)>> {
        let p = 1.0 / self.n as f64;
        Ok((0..self.n)
            .map(|u| (FactoredState::new(vec![0.0], vec![u as f64]), p))
            .collect())
    }

    fn transitions(&self, state: &FactoredState, action: usize) -> Result<Vec<Transition>> {
        self.check_action(action)?;
        let (next, reward) = self.successor(state, action);
        Ok(vec![Transition {
            next,
            prob: 1.0,
            reward,
        }])
    }
}
