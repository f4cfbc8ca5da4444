use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, FactoredState, Transition, UDomain};
use crate::numerics::prob::sample_index;
use crate::numerics::rng::Stream;

/// `(next state index, probability, reward)`
pub type Outcome = (usize, f64, f64);

/// Finite environment given by explicit tables.
///
/// The policy input is a one-hot encoding of the state index, so a linear policy
/// is a fully tabular one.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    spec: EnvSpec,
    states: Vec<FactoredState>,
    index: BTreeMap<Vec<u64>, usize>,
    initial: Vec<(usize, f64)>,
    table: Vec<Vec<Vec<Outcome>>>,
}

fn check_mass(mass: f64, what: &str) -> Result<()> {
    if (mass - 1.0).abs() > 1e-12 {
        return Err(Error::contract(format!("{what} has total mass {mass}")));
    }
    Ok(())
}

impl TabularEnv {
    /// `table[s][a]` lists the outcomes of action `a` in state `s`. `u` must be a
    /// category index.
    pub fn new(
        name: &str,
        horizon: usize,
        states: Vec<FactoredState>,
        initial: Vec<(usize, f64)>,
        table: Vec<Vec<Vec<Outcome>>>,
        u_constant: bool,
    ) -> Result<Self> {
        if states.is_empty() || table.len() != states.len() {
            return Err(Error::contract("need one table row per state"));
        }
        let action_count = table[0].len();
        let x_dim = states[0].x.len();
        let mut index = BTreeMap::new();
        for (i, s) in states.iter().enumerate() {
            if s.x.len() != x_dim || s.u.len() != 1 || s.u[0] < 0.0 || s.u[0].fract() != 0.0 {
                return Err(Error::contract(format!(
                    "state {i} does not fit the layout"
                )));
            }
            if index.insert(s.key(), i).is_some() {
                return Err(Error::contract(format!("state {i} is listed twice")));
            }
        }
        check_mass(initial.iter().map(|(_, p)| p).sum(), "initial distribution")?;
        for (s, row) in table.iter().enumerate() {
            if row.len() != action_count {
                return Err(Error::contract(format!(
                    "state {s} has {} actions",
                    row.len()
                )));
            }
            for (a, outs) in row.iter().enumerate() {
                if outs.iter().any(|o| o.0 >= states.len() || o.1 < 0.0) {
                    return Err(Error::contract(format!(
                        "bad outcome in state {s}, action {a}"
                    )));
                }
                check_mass(
                    outs.iter().map(|o| o.1).sum(),
                    &format!("state {s}, action {a}"),
                )?;
            }
        }
        let categories = states.iter().map(|s| s.u_index()).max().unwrap_or(0) + 1;
        let spec = EnvSpec {
            name: name.to_string(),
            horizon,
            action_count,
            x_dim,
            u_dim: 1,
            u_domain: UDomain::Categorical(categories),
            u_constant,
            has_exact_dynamics: true,
            is_finite: true,
            input_dim: states.len(),
        };
        Ok(TabularEnv {
            spec,
            states,
            index,
            initial,
            table,
        })
    }

    pub fn states(&self) -> &[FactoredState] {
        &self.states
    }

    pub fn state_index(&self, state: &FactoredState) -> Result<usize> {
        self.index.get(&state.key()).copied().ok_or_else(|| {
            Error::contract(format!("state {state:?} is not in `{}`", self.spec.name))
        })
    }

    /// Guess the coin: `u` is a fair coin, `x` records the previous action and the
    /// reward is 1 when the action equals `u`. Deterministic.
    pub fn coin(horizon: usize) -> Self {
        let states: Vec<_> = (0..4)
            .map(|i| FactoredState::new(vec![(i / 2) as f64], vec![(i % 2) as f64]))
            .collect();
        let table = (0..4)
            .map(|i| {
                let u = i % 2;
                (0..2)
                    .map(|a| vec![(2 * a + u, 1.0, (a == u) as u8 as f64)])
                    .collect()
            })
            .collect();
        Self::new(
            "coin",
            horizon,
            states,
            vec![(0, 0.5), (1, 0.5)],
            table,
            true,
        )
        .expect("coin tables are valid")
    }

    /// Two-step task with stochastic `x` and `u` dynamics, rewards depending on
    /// everything and a correlated start. Small enough for exact gradients.
    pub fn two_step() -> Self {
        let states: Vec<_> = (0..4)
            .map(|i| FactoredState::new(vec![(i / 2) as f64], vec![(i % 2) as f64]))
            .collect();
        let initial = vec![(0, 0.3), (1, 0.2), (2, 0.1), (3, 0.4)];
        let table = (0..4)
            .map(|i| {
                let (x, u) = ((i / 2) as f64, (i % 2) as f64);
                (0..2)
                    .map(|a| {
                        let af = a as f64;
                        let p_x1 = 0.1 + 0.25 * af + 0.3 * u + 0.2 * x;
                        let p_flip = 0.1 + 0.2 * af;
                        let reward = [[1.0, 0.2], [0.4, 0.9]][u as usize][a] + 0.3 * x;
                        let mut outs = Vec::with_capacity(4);
                        for nx in 0..2 {
                            for nu in 0..2 {
                                let px = if nx == 1 { p_x1 } else { 1.0 - p_x1 };
                                let pu = if nu as f64 == u { 1.0 - p_flip } else { p_flip };
                                outs.push((2 * nx + nu, px * pu, reward));
                            }
                        }
                        outs
                    })
                    .collect()
            })
            .collect();
        Self::new("two_step", 2, states, initial, table, false).expect("two-step tables are valid")
    }

    /// One-step classification: features `x`, protected `u`, label `y`. The action is
    /// the predicted label and pays 1 when correct.
    ///
    /// `rows` lists `(x, u, P(x, u), P(y = 1 | x, u))`.
    pub fn classification(rows: &[(usize, usize, f64, f64)]) -> Result<Self> {
        let states: Vec<_> = rows
            .iter()
            .map(|&(x, u, _, _)| FactoredState::new(vec![x as f64], vec![u as f64]))
            .collect();
        let initial = rows.iter().enumerate().map(|(i, r)| (i, r.2)).collect();
        let mut table = Vec::with_capacity(rows.len());
        for (i, &(_, _, _, p1)) in rows.iter().enumerate() {
            if !(0.0..=1.0).contains(&p1) {
                return Err(Error::contract("label probability outside [0, 1]"));
            }
            table.push(
                (0..2)
                    .map(|a| {
                        vec![
                            (i, 1.0 - p1, (a == 0) as u8 as f64),
                            (i, p1, (a == 1) as u8 as f64),
                        ]
                        .into_iter()
                        .filter(|o| o.1 > 0.0)
                        .collect()
                    })
                    .collect(),
            );
        }
        Self::new("classification", 1, states, initial, table, true)
    }

    /// Three feature values weakly tied to a binary group, labels strongly tied to it.
    pub fn biased_classification() -> Self {
        let mut rows = vec![];
        for u in 0..2 {
            let px = if u == 0 {
                [0.5, 0.3, 0.2]
            } else {
                [0.2, 0.3, 0.5]
            };
            for (x, p) in px.iter().enumerate() {
                let p_y1 = if u == 1 { 0.9 } else { 0.1 } * (0.9 + 0.1 * x as f64 / 2.0);
                rows.push((x, u, 0.5 * p, p_y1));
            }
        }
        Self::classification(&rows).expect("classification rows are valid")
    }
}

impl Environment for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let probs: Vec<f64> = self.initial.iter().map(|(_, p)| *p).collect();
        self.states[self.initial[sample_index(&probs, rng)].0].clone()
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        self.check_action(action)?;
        let outs = &self.table[self.state_index(state)?][action];
        let probs: Vec<f64> = outs.iter().map(|o| o.1).collect();
        let (next, _, reward) = outs[sample_index(&probs, rng)];
        Ok((self.states[next].clone(), reward))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        let i = self.index.get(&state.key()).copied();
        out.extend((0..self.states.len()).map(|j| if Some(j) == i { 1.0 } else { 0.0 }));
    }

    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        self.check_action(action)?;
        let s = self.state_index(state)?;
        let Some(&n) = self.index.get(&next.key()) else {
            return Ok(0.0);
        };
        Ok(self.table[s][action]
            .iter()
            .filter(|o| o.0 == n)
            .map(|o| o.1)
            .sum())
    }

    fn initial_support(&self) -> Result<Vec<(FactoredState, f64)>> {
        Ok(self
            .initial
            .iter()
            .map(|&(i, p)| (self.states[i].clone(), p))
            .collect())
    }

    fn transitions(&self, state: &FactoredState, action: usize) -> Result<Vec<Transition>> {
        self.check_action(action)?;
        let s = self.state_index(state)?;
        Ok(self.table[s][action]
            .iter()
            .map(|&(n, prob, reward)| Transition {
                next: self.states[n].clone(),
                prob,
                reward,
            })
            .collect())
    }
}
