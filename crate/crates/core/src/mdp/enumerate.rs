//! Exact oracles for finite environments.
//!
//! [`enumerate_trajectories`] lists every positive-probability trajectory; the MI
//! quantities over whole trajectories are plug-in values of that exact joint.
//! Per-timestep quantities also have a forward dynamic-programming route over state
//! marginals, which stays cheap at horizons where full enumeration does not.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{Environment, FactoredState, PolicyParams, Trajectory};

pub const DEFAULT_ENUMERATION_CAP: u64 = 10_000_000;

type Key = Vec<u64>;

struct DistCache<'a> {
    env: &'a dyn Environment,
    policy: &'a PolicyParams,
    cache: BTreeMap<Key, Vec<f64>>,
}

impl<'a> DistCache<'a> {
    fn new(env: &'a dyn Environment, policy: &'a PolicyParams) -> Self {
        DistCache {
            env,
            policy,
            cache: BTreeMap::new(),
        }
    }

    fn get(&mut self, state: &FactoredState) -> Result<&Vec<f64>> {
        let key = state.key();
        if !self.cache.contains_key(&key) {
            let d = self.policy.action_dist(self.env, state)?;
            self.cache.insert(key.clone(), d);
        }
        Ok(&self.cache[&key])
    }
}

fn require_finite(env: &dyn Environment) -> Result<()> {
    if !env.spec().is_finite {
        return Err(env.unsupported("enumeration"));
    }
    Ok(())
}

/// Number of positive-probability trajectories, by counting paths per state.
pub fn count_trajectories(env: &dyn Environment, policy: &PolicyParams) -> Result<u128> {
    require_finite(env)?;
    policy.check_env(env)?;
    let mut dists = DistCache::new(env, policy);
    let mut counts: BTreeMap<Key, (FactoredState, u128)> = BTreeMap::new();
    for (s, p) in env.initial_support()? {
        if p > 0.0 {
            counts.entry(s.key()).or_insert((s, 0)).1 += 1;
        }
    }
    for _ in 0..env.spec().horizon {
        let mut next: BTreeMap<Key, (FactoredState, u128)> = BTreeMap::new();
        for (state, n) in counts.values() {
            let dist = dists.get(state)?.clone();
            for (a, &qa) in dist.iter().enumerate() {
                if qa <= 0.0 {
                    continue;
                }
                for tr in env.transitions(state, a)? {
                    if tr.prob > 0.0 {
                        let e = next.entry(tr.next.key()).or_insert((tr.next, 0));
                        e.1 = e.1.saturating_add(*n);
                    }
                }
            }
        }
        counts = next;
    }
    Ok(counts
        .values()
        .fold(0u128, |acc, (_, n)| acc.saturating_add(*n)))
}

/// Every trajectory with positive probability, exactly once, with its probability.
pub fn enumerate_trajectories(
    env: &dyn Environment,
    policy: &PolicyParams,
    cap: u64,
) -> Result<Vec<(Trajectory, f64)>> {
    require_finite(env)?;
    policy.check_env(env)?;
    let needed = count_trajectories(env, policy)?;
    if needed > cap as u128 {
        return Err(Error::Capacity { needed, cap });
    }
    let horizon = env.spec().horizon;
    let mut dists = DistCache::new(env, policy);
    let mut frontier: Vec<(Trajectory, FactoredState, f64)> = env
        .initial_support()?
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(s, p)| (Trajectory::with_capacity(horizon, s.clone()), s, p))
        .collect();
    for _ in 0..horizon {
        let mut next_frontier = Vec::new();
        for (traj, state, prob) in frontier {
            let dist = dists.get(&state)?.clone();
            for (a, &qa) in dist.iter().enumerate() {
                if qa <= 0.0 {
                    continue;
                }
                for tr in env.transitions(&state, a)? {
                    if tr.prob <= 0.0 {
                        continue;
                    }
                    if next_frontier.len() as u64 >= cap {
                        return Err(Error::Capacity {
                            needed: next_frontier.len() as u128 + 1,
                            cap,
                        });
                    }
                    let mut t = traj.clone();
                    t.xs.push(state.x.clone());
                    t.us.push(state.u.clone());
                    t.actions.push(a);
                    t.rewards.push(tr.reward);
                    t.log_probs.push(qa.ln());
                    t.terminal = tr.next.clone();
                    next_frontier.push((t, tr.next, prob * qa * tr.prob));
                }
            }
        }
        frontier = next_frontier;
    }
    Ok(frontier.into_iter().map(|(t, _, p)| (t, p)).collect())
}

/// Plug-in MI of a joint given as (a-key, b-key, probability) triples.
pub fn mi_of_joint<I>(entries: I) -> f64
where
    I: IntoIterator<Item = (Key, Key, f64)>,
{
    let mut joint: BTreeMap<(Key, Key), f64> = BTreeMap::new();
    let mut pa: BTreeMap<Key, f64> = BTreeMap::new();
    let mut pb: BTreeMap<Key, f64> = BTreeMap::new();
    for (a, b, p) in entries {
        *pa.entry(a.clone()).or_default() += p;
        *pb.entry(b.clone()).or_default() += p;
        *joint.entry((a, b)).or_default() += p;
    }
    let total: f64 = pa.values().sum();
    joint
        .iter()
        .filter(|(_, p)| **p > 0.0)
        .map(|((a, b), p)| p * ((p * total).ln() - pa[a].ln() - pb[b].ln()))
        .sum::<f64>()
        / total
}

/// Exact MI quantities of a policy on a finite environment, in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMi {
    /// I(a_t; u_t)
    pub per_timestep: Vec<f64>,
    /// I(τ_a; u_t)
    pub actions_vs_u: Vec<f64>,
    /// I(τ_a; τ_u)
    pub actions_vs_traj_u: f64,
    /// I(τ_a, τ_x; τ_u)
    pub actions_states_vs_traj_u: f64,
}

fn bits(v: &[f64]) -> Key {
    v.iter().map(|x| x.to_bits()).collect()
}

fn seq_key(seq: &[Vec<f64>]) -> Key {
    seq.iter().flat_map(|v| bits(v)).collect()
}

fn action_key(t: &Trajectory) -> Key {
    t.actions.iter().map(|a| *a as u64).collect()
}

pub fn exact_mi_quantities(env: &dyn Environment, policy: &PolicyParams) -> Result<ExactMi> {
    exact_mi_quantities_capped(env, policy, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_mi_quantities_capped(
    env: &dyn Environment,
    policy: &PolicyParams,
    cap: u64,
) -> Result<ExactMi> {
    exact_mi_from_enumeration(&enumerate_trajectories(env, policy, cap)?)
}

pub fn exact_mi_from_enumeration(trajs: &[(Trajectory, f64)]) -> Result<ExactMi> {
    let horizon = trajs.first().map(|(t, _)| t.len()).unwrap_or(0);
    let per_timestep = (0..horizon)
        .map(|t| {
            mi_of_joint(
                trajs
                    .iter()
                    .map(|(tr, p)| (vec![tr.actions[t] as u64], bits(&tr.us[t]), *p)),
            )
        })
        .collect();
    let actions_vs_u = (0..horizon)
        .map(|t| {
            mi_of_joint(
                trajs
                    .iter()
                    .map(|(tr, p)| (action_key(tr), bits(&tr.us[t]), *p)),
            )
        })
        .collect();
    let actions_vs_traj_u = mi_of_joint(
        trajs
            .iter()
            .map(|(tr, p)| (action_key(tr), seq_key(&tr.us), *p)),
    );
    let actions_states_vs_traj_u = mi_of_joint(trajs.iter().map(|(tr, p)| {
        let mut k = action_key(tr);
        k.push(u64::MAX);
        k.extend(seq_key(&tr.xs));
        (k, seq_key(&tr.us), *p)
    }));
    Ok(ExactMi {
        per_timestep,
        actions_vs_u,
        actions_vs_traj_u,
        actions_states_vs_traj_u,
    })
}

/// Exact joint of (u_t, a_t) for every t, by forward propagation of state marginals.
pub fn exact_timestep_joints(
    env: &dyn Environment,
    policy: &PolicyParams,
) -> Result<Vec<BTreeMap<(Key, usize), f64>>> {
    require_finite(env)?;
    policy.check_env(env)?;
    let mut dists = DistCache::new(env, policy);
    let mut marginal: BTreeMap<Key, (FactoredState, f64)> = BTreeMap::new();
    for (s, p) in env.initial_support()? {
        marginal.entry(s.key()).or_insert((s, 0.0)).1 += p;
    }
    let mut joints = Vec::with_capacity(env.spec().horizon);
    for _ in 0..env.spec().horizon {
        let mut joint = BTreeMap::new();
        let mut next: BTreeMap<Key, (FactoredState, f64)> = BTreeMap::new();
        for (state, p) in marginal.values() {
            let dist = dists.get(state)?.clone();
            for (a, qa) in dist.iter().enumerate() {
                *joint.entry((state.u_key(), a)).or_insert(0.0) += p * qa;
                for tr in env.transitions(state, a)? {
                    if tr.prob > 0.0 {
                        next.entry(tr.next.key()).or_insert((tr.next, 0.0)).1 += p * qa * tr.prob;
                    }
                }
            }
        }
        joints.push(joint);
        marginal = next;
    }
    Ok(joints)
}

/// I(a_t; u_t) for every t without enumerating whole trajectories.
pub fn exact_timestep_mi(env: &dyn Environment, policy: &PolicyParams) -> Result<Vec<f64>> {
    Ok(exact_timestep_joints(env, policy)?
        .into_iter()
        .map(|joint| mi_of_joint(joint.into_iter().map(|((u, a), p)| (vec![a as u64], u, p))))
        .collect())
}

/// Expected undiscounted return by forward propagation.
pub fn exact_expected_return(env: &dyn Environment, policy: &PolicyParams) -> Result<f64> {
    require_finite(env)?;
    let mut dists = DistCache::new(env, policy);
    let mut marginal: BTreeMap<Key, (FactoredState, f64)> = BTreeMap::new();
    for (s, p) in env.initial_support()? {
        marginal.entry(s.key()).or_insert((s, 0.0)).1 += p;
    }
    let mut total = 0.0;
    for _ in 0..env.spec().horizon {
        let mut next: BTreeMap<Key, (FactoredState, f64)> = BTreeMap::new();
        for (state, p) in marginal.values() {
            let dist = dists.get(state)?.clone();
            for (a, qa) in dist.iter().enumerate() {
                for tr in env.transitions(state, a)? {
                    total += p * qa * tr.prob * tr.reward;
                    if tr.prob > 0.0 {
                        next.entry(tr.next.key()).or_insert((tr.next, 0.0)).1 += p * qa * tr.prob;
                    }
                }
            }
        }
        marginal = next;
    }
    Ok(total)
}
