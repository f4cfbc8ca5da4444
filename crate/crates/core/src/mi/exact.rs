use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::enumerate::{enumerate_trajectories, exact_timestep_joints};
use crate::mdp::{Environment, PolicyParams, Trajectory, DEFAULT_ENUMERATION_CAP};

use super::{TimestepCritic, TrajectoryCritic};

type Key = Vec<u64>;

fn bits(v: &[f64]) -> Key {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Exact `log p(u_t|a_t) - log p(u_t)` of a policy on a finite environment.
#[derive(Clone, Debug)]
pub struct ExactTimestepCritic {
    log_ratio: Vec<BTreeMap<(Key, usize), f64>>,
}

impl ExactTimestepCritic {
    pub fn new(env: &dyn Environment, policy: &PolicyParams) -> Result<Self> {
        let joints = exact_timestep_joints(env, policy)?;
        let log_ratio = joints
            .into_iter()
            .map(|joint| {
                let mut pu: BTreeMap<Key, f64> = BTreeMap::new();
                let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
                for ((u, a), p) in &joint {
                    *pu.entry(u.clone()).or_default() += p;
                    *pa.entry(*a).or_default() += p;
                }
                joint
                    .iter()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|((u, a), p)| ((u.clone(), *a), p.ln() - pu[u].ln() - pa[a].ln()))
                    .collect()
            })
            .collect();
        Ok(ExactTimestepCritic { log_ratio })
    }
}

impl TimestepCritic for ExactTimestepCritic {
    fn log_ratios(&self, batch: &[Trajectory], t: usize) -> Result<Vec<f64>> {
        let table = self.log_ratio.get(t).ok_or_else(|| {
            Error::contract(format!("timestep {t} beyond the enumerated horizon"))
        })?;
        batch
            .iter()
            .map(|tr| {
                table
                    .get(&(bits(&tr.us[t]), tr.actions[t]))
                    .copied()
                    .ok_or_else(|| Error::Estimation(format!("zero-probability (u, a) at t={t}")))
            })
            .collect()
    }
}

fn context_key(tr: &Trajectory) -> Key {
    let mut k: Key = tr.actions.iter().map(|a| *a as u64).collect();
    k.push(u64::MAX);
    k.extend(tr.xs.iter().flat_map(|x| bits(x)));
    k
}

fn u_seq_key(tr: &Trajectory) -> Key {
    tr.us.iter().flat_map(|u| bits(u)).collect()
}

/// Exact `log p(τ_u|τ_a,τ_x) - log p(τ_u)` from full enumeration.
#[derive(Clone, Debug)]
pub struct ExactTrajectoryCritic {
    log_ratio: BTreeMap<(Key, Key), f64>,
    /// `I(τ_a, τ_x; τ_u)`
    pub mi: f64,
}

impl ExactTrajectoryCritic {
    pub fn new(env: &dyn Environment, policy: &PolicyParams) -> Result<Self> {
        let trajs = enumerate_trajectories(env, policy, DEFAULT_ENUMERATION_CAP)?;
        let mut joint: BTreeMap<(Key, Key), f64> = BTreeMap::new();
        let mut pc: BTreeMap<Key, f64> = BTreeMap::new();
        let mut pu: BTreeMap<Key, f64> = BTreeMap::new();
        for (tr, p) in &trajs {
            let (c, u) = (context_key(tr), u_seq_key(tr));
            *pc.entry(c.clone()).or_default() += p;
            *pu.entry(u.clone()).or_default() += p;
            *joint.entry((c, u)).or_default() += p;
        }
        let log_ratio: BTreeMap<_, _> = joint
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|((c, u), p)| ((c.clone(), u.clone()), p.ln() - pc[c].ln() - pu[u].ln()))
            .collect();
        let mi = joint
            .iter()
            .filter(|(_, p)| **p > 0.0)
            .map(|(k, p)| p * log_ratio[k])
            .sum();
        Ok(ExactTrajectoryCritic { log_ratio, mi })
    }
}

impl TrajectoryCritic for ExactTrajectoryCritic {
    fn log_ratios(&self, batch: &[Trajectory]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|tr| {
                self.log_ratio
                    .get(&(context_key(tr), u_seq_key(tr)))
                    .copied()
                    .ok_or_else(|| {
                        Error::Estimation("trajectory outside the enumerated support".into())
                    })
            })
            .collect()
    }
}
