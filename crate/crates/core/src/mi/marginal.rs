use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::numerics::prob::{clamp_log_prob, gaussian_logpdf, VARIANCE_FLOOR};

use super::HeadKind;

/// Distribution of `u_t` under the current policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Categorical(Vec<f64>),
    Gaussian { mean: f64, var: f64 },
}

impl Marginal {
    pub fn log_prob(&self, u: f64) -> Result<f64> {
        match self {
            Marginal::Categorical(p) => {
                let i = u as usize;
                let pi = p.get(i).ok_or_else(|| {
                    Error::contract(format!("u = {u} outside {} categories", p.len()))
                })?;
                Ok(clamp_log_prob(pi.ln()))
            }
            Marginal::Gaussian { mean, var } => gaussian_logpdf(u, *mean, *var),
        }
    }
}

/// Marginals of `u_t` for every timestep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub per_timestep: Vec<Marginal>,
    /// Timesteps whose fitted variance was raised to the floor.
    pub clamped: Vec<usize>,
}

impl MarginalModel {
    pub fn fit(batch: &[Trajectory], kind: HeadKind) -> Result<Self> {
        let horizon = batch.first().map(Trajectory::len).unwrap_or(0);
        let mut per_timestep = Vec::with_capacity(horizon);
        let mut clamped = vec![];
        for t in 0..horizon {
            let (m, c) = fit_marginal(batch, t, kind)?;
            if c {
                clamped.push(t);
            }
            per_timestep.push(m);
        }
        Ok(MarginalModel {
            per_timestep,
            clamped,
        })
    }

    pub fn log_prob(&self, t: usize, u: f64) -> Result<f64> {
        self.per_timestep
            .get(t)
            .ok_or_else(|| Error::contract(format!("no marginal for timestep {t}")))?
            .log_prob(u)
    }
}

/// Fit the marginal of `u_t` over `batch`. The flag reports a variance clamp.
pub fn fit_marginal(batch: &[Trajectory], t: usize, kind: HeadKind) -> Result<(Marginal, bool)> {
    if batch.is_empty() {
        return Err(Error::Estimation("marginal of an empty batch".into()));
    }
    let n = batch.len() as f64;
    match kind {
        HeadKind::Categorical(k) => {
            let mut p = vec![0.0; k];
            for tr in batch {
                let u = tr.us[t][0] as usize;
                if u >= k {
                    return Err(Error::contract(format!("u = {u} outside {k} categories")));
                }
                p[u] += 1.0;
            }
            Ok((
                Marginal::Categorical(p.into_iter().map(|c| c / n).collect()),
                false,
            ))
        }
        HeadKind::Gaussian => {
            let mean = batch.iter().map(|tr| tr.us[t][0]).sum::<f64>() / n;
            let var = batch
                .iter()
                .map(|tr| (tr.us[t][0] - mean).powi(2))
                .sum::<f64>()
                / n;
            let clamp = !(var >= VARIANCE_FLOOR);
            Ok((
                Marginal::Gaussian {
                    mean,
                    var: var.max(VARIANCE_FLOOR),
                },
                clamp,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::FactoredState;
    use crate::numerics::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn batch_of(us: &[f64]) -> Vec<Trajectory> {
        us.iter()
            .map(|&u| {
                let mut t = Trajectory::with_capacity(1, FactoredState::new(vec![], vec![u]));
                t.xs.push(vec![]);
                t.us.push(vec![u]);
                t.actions.push(0);
                t.rewards.push(0.0);
                t.log_probs.push(0.0);
                t
            })
            .collect()
    }

    #[test]
    fn constant_u_gives_point_mass() {
        let b = batch_of(&[2.0; 10]);
        let (m, c) = fit_marginal(&b, 0, HeadKind::Categorical(3)).unwrap();
        assert_eq!(m, Marginal::Categorical(vec![0.0, 0.0, 1.0]));
        assert!(!c);
        let (m, c) = fit_marginal(&b, 0, HeadKind::Gaussian).unwrap();
        assert_eq!(
            m,
            Marginal::Gaussian {
                mean: 2.0,
                var: VARIANCE_FLOOR
            }
        );
        assert!(c);
    }

    #[test]
    fn frequencies_sum_to_one() {
        let b = batch_of(&[0.0, 1.0, 1.0, 2.0, 0.0, 1.0, 2.0]);
        let (m, _) = fit_marginal(&b, 0, HeadKind::Categorical(3)).unwrap();
        let Marginal::Categorical(p) = m else {
            panic!()
        };
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_moments() {
        let mut r = rng::stream(8, 0);
        let n = 10_000;
        let us: Vec<f64> = (0..n)
            .map(|_| 2.0 + 3.0 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let (m, _) = fit_marginal(&batch_of(&us), 0, HeadKind::Gaussian).unwrap();
        let Marginal::Gaussian { mean, var } = m else {
            panic!()
        };
        assert!((mean - 2.0).abs() < 3.0 * (9.0 / n as f64).sqrt());
        assert!((var - 9.0).abs() < 3.0 * 9.0 * (2.0 / n as f64).sqrt());
    }
}
