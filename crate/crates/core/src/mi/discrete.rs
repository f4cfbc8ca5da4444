use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::Trajectory;

use super::TimestepCritic;

/// Plug-in MI of the empirical joint of `(u, a)` pairs, in nats.
pub fn empirical_mi_discrete(pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Estimation("empirical MI of an empty sample".into()));
    }
    let table = CountTable::from_pairs(pairs.iter().copied());
    Ok(table.mi())
}

/// Joint counts of `(u, a)`.
#[derive(Clone, Debug, Default)]
struct CountTable {
    joint: BTreeMap<(usize, usize), f64>,
    u: BTreeMap<usize, f64>,
    a: BTreeMap<usize, f64>,
    n: f64,
}

impl CountTable {
    fn from_pairs(pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut t = CountTable::default();
        for (u, a) in pairs {
            *t.joint.entry((u, a)).or_default() += 1.0;
            *t.u.entry(u).or_default() += 1.0;
            *t.a.entry(a).or_default() += 1.0;
            t.n += 1.0;
        }
        t
    }

    /// `log p̂(u|a) - log p̂(u)`, or `None` for an unseen pair.
    fn log_ratio(&self, u: usize, a: usize) -> Option<f64> {
        let c = *self.joint.get(&(u, a))?;
        Some((c * self.n).ln() - self.u[&u].ln() - self.a[&a].ln())
    }

    fn mi(&self) -> f64 {
        self.joint
            .iter()
            .map(|(&(u, a), c)| c / self.n * self.log_ratio(u, a).unwrap_or(0.0))
            .sum::<f64>()
            .max(0.0)
    }
}

/// Log ratios from the empirical `(u_t, a_t)` frequencies of a reference batch.
///
/// Only meaningful for categorical `u`. Pairs absent from the reference batch have
/// no ratio and are reported as an estimation error.
#[derive(Clone, Debug)]
pub struct EmpiricalCritic {
    tables: Vec<CountTable>,
}

impl EmpiricalCritic {
    pub fn fit(batch: &[Trajectory]) -> Result<Self> {
        let horizon = batch
            .first()
            .map(Trajectory::len)
            .ok_or_else(|| Error::Estimation("empty batch".into()))?;
        let tables = (0..horizon)
            .map(|t| {
                CountTable::from_pairs(batch.iter().map(|tr| (tr.us[t][0] as usize, tr.actions[t])))
            })
            .collect();
        Ok(EmpiricalCritic { tables })
    }

    /// Plug-in MI of the reference batch at every timestep.
    pub fn per_timestep(&self) -> Vec<f64> {
        self.tables.iter().map(CountTable::mi).collect()
    }
}

impl TimestepCritic for EmpiricalCritic {
    fn log_ratios(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>> {
        let table = self
            .tables
            .get(t)
            .ok_or_else(|| Error::contract(format!("timestep {t} beyond the fitted horizon")))?;
        batch
            .iter()
            .map(|tr| {
                let (u, a) = (tr.us[t][0] as usize, tr.actions[t]);
                table.log_ratio(u, a).ok_or_else(|| {
                    Error::Estimation(format!("pair (u={u}, a={a}) unseen at t={t}"))
                })
            })
            .collect()
    }
}
