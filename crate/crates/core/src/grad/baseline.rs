use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{Environment, Trajectory};
use crate::numerics::{
    backward_batch, forward_batch, Activation, Activations, AdamState, MlpSpec, ParamVector,
};

/// Value baseline θ(x, u) over the environment's state encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineParams {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

impl BaselineParams {
    pub fn init<R: Rng + ?Sized>(
        env: &dyn Environment,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let spec = MlpSpec::new(env.spec().input_dim, hidden, 1, activation);
        let params = ParamVector::init(&spec, rng);
        BaselineParams { spec, params }
    }

    /// The constant-zero baseline.
    pub fn zero(env: &dyn Environment, hidden: &[usize], activation: Activation) -> Self {
        let spec = MlpSpec::new(env.spec().input_dim, hidden, 1, activation);
        let params = ParamVector::zeros(&spec);
        BaselineParams { spec, params }
    }

    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        if spec.output_dim != 1 {
            return Err(Error::contract("baseline must have a scalar output"));
        }
        params.check_spec(&spec)?;
        Ok(BaselineParams { spec, params })
    }

    fn forward(&self, inputs: &[f64], rows: usize) -> Result<Activations> {
        let acts = forward_batch(&self.spec, &self.params, inputs, rows)?;
        if acts.output().iter().any(|v| !v.is_finite()) {
            return Err(Error::divergence("baseline produced non-finite values"));
        }
        Ok(acts)
    }

    /// θ at every state of `batch`, rows ordered trajectory-major.
    pub fn values(&self, env: &dyn Environment, batch: &[Trajectory]) -> Result<Vec<f64>> {
        let (inputs, rows) = encode_states(env, batch);
        Ok(self.forward(&inputs, rows)?.into_output())
    }
}

/// Encoded `(x_t, u_t)` of every step, trajectory-major.
pub(crate) fn encode_states(env: &dyn Environment, batch: &[Trajectory]) -> (Vec<f64>, usize) {
    let rows: usize = batch.iter().map(Trajectory::len).sum();
    let mut inputs = Vec::with_capacity(rows * env.spec().input_dim);
    for tr in batch {
        for t in 0..tr.len() {
            env.encode(&tr.state(t), &mut inputs);
        }
    }
    (inputs, rows)
}

/// Return-to-go minus the baseline value at each step.
pub fn returns_and_advantages(
    env: &dyn Environment,
    traj: &Trajectory,
    baseline: &BaselineParams,
) -> Result<Vec<f64>> {
    let values = baseline.values(env, std::slice::from_ref(traj))?;
    Ok(traj
        .returns_to_go()
        .iter()
        .zip(values)
        .map(|(g, v)| g - v)
        .collect())
}

/// One Adam step on the mean squared error between θ and the return-to-go.
/// Returns the error before the step.
pub fn baseline_update(
    env: &dyn Environment,
    batch: &[Trajectory],
    baseline: &mut BaselineParams,
    adam: &mut AdamState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("baseline update on an empty batch"));
    }
    let (inputs, rows) = encode_states(env, batch);
    let acts = baseline.forward(&inputs, rows)?;
    let targets: Vec<f64> = batch.iter().flat_map(Trajectory::returns_to_go).collect();
    let n = rows as f64;
    let resid: Vec<f64> = acts
        .output()
        .iter()
        .zip(&targets)
        .map(|(v, g)| v - g)
        .collect();
    let mse = resid.iter().map(|r| r * r).sum::<f64>() / n;
    if !mse.is_finite() {
        return Err(Error::divergence("non-finite baseline error"));
    }
    let cot: Vec<f64> = resid.iter().map(|r| 2.0 * r / n).collect();
    let (grad, _) = backward_batch(&baseline.spec, &baseline.params, &acts, &cot)?;
    adam.step(&mut baseline.params, &grad)?;
    Ok(mse)
}
