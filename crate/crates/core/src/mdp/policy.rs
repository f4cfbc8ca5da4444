use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::prob::{log_softmax, softmax};
use crate::numerics::{forward, forward_batch, Activation, Activations, MlpSpec, ParamVector};

use super::{Environment, FactoredState};

/// A stationary softmax policy q_φ(a | x, u) over the environment's encoded state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl PolicyParams {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        params.check_spec(&spec)?;
        Ok(PolicyParams { spec, params })
    }

    pub fn spec_for(env: &dyn Environment, hidden: &[usize], activation: Activation) -> MlpSpec {
        let s = env.spec();
        MlpSpec::new(s.input_dim, hidden, s.action_count, activation)
    }

    pub fn init<R: Rng + ?Sized>(
        env: &dyn Environment,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let spec = Self::spec_for(env, hidden, activation);
        let params = ParamVector::init(&spec, rng);
        PolicyParams { spec, params }
    }

    /// All-zero parameters: the uniform policy.
    pub fn uniform(env: &dyn Environment, hidden: &[usize], activation: Activation) -> Self {
        let spec = Self::spec_for(env, hidden, activation);
        let params = ParamVector::zeros(&spec);
        PolicyParams { spec, params }
    }

    pub fn check_env(&self, env: &dyn Environment) -> Result<()> {
        let s = env.spec();
        if self.spec.input_dim != s.input_dim || self.spec.output_dim != s.action_count {
            return Err(Error::contract(format!(
                "policy [{}] does not fit `{}` (input {}, actions {})",
                self.spec, s.name, s.input_dim, s.action_count
            )));
        }
        Ok(())
    }

    pub fn logits(&self, env: &dyn Environment, state: &FactoredState) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.spec.input_dim);
        env.encode(state, &mut input);
        let logits = forward(&self.spec, &self.params, &input)?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::divergence("policy produced non-finite logits"));
        }
        Ok(logits)
    }

    /// q_φ(· | x, u)
    pub fn action_dist(&self, env: &dyn Environment, state: &FactoredState) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(env, state)?))
    }

    pub fn log_prob(
        &self,
        env: &dyn Environment,
        state: &FactoredState,
        action: usize,
    ) -> Result<f64> {
        let lp = log_softmax(&self.logits(env, state)?);
        lp.get(action)
            .copied()
            .ok_or_else(|| Error::contract(format!("action {action} out of range")))
    }

    /// Forward pass over a row-major batch of encoded states.
    pub fn forward_rows(&self, inputs: &[f64], rows: usize) -> Result<Activations> {
        let acts = forward_batch(&self.spec, &self.params, inputs, rows)?;
        if acts.output().iter().any(|z| !z.is_finite()) {
            return Err(Error::divergence("policy produced non-finite logits"));
        }
        Ok(acts)
    }
}
