use crate::error::{Error, Result};

use super::params::ParamVector;

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &ParamVector, h: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::divergence(format!(
                "objective not finite around coordinate {i}"
            )));
        }
        grad.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
