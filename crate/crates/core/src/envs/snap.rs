use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{EnvSpec, Environment, FactoredState, UDomain};
use crate::numerics::prob::{gaussian_logpdf, normal_cdf, sample_index};
use crate::numerics::rng::Stream;

/// One Gaussian component of an income density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Gaussian mixture over income; a KDE is the equal-weight special case.
#[derive(Clone, Debug, PartialEq)]
pub struct IncomeDensity {
    components: Vec<Component>,
    weights: Vec<f64>,
}

impl IncomeDensity {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Data("income mixture has no components".into()));
        }
        if components
            .iter()
            .any(|c| !(c.weight > 0.0 && c.sd > 0.0 && c.mean.is_finite()))
        {
            return Err(Error::Data(
                "mixture weights and scales must be positive".into(),
            ));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        let weights = components.iter().map(|c| c.weight / total).collect();
        Ok(IncomeDensity {
            components,
            weights,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn density(&self, x: f64) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * gaussian_logpdf(x, c.mean, c.sd * c.sd).map_or(0.0, f64::exp))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.mean)
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = &self.components[sample_index(&self.weights, rng)];
        let z: f64 = rng.sample(StandardNormal);
        c.mean + c.sd * z
    }
}

/// Per-group Gaussian KDE of incomes. Groups must be `0` and `1`.
pub fn fit_income_kde(records: &[(usize, f64)], bandwidth: f64) -> Result<[IncomeDensity; 2]> {
    if !(bandwidth > 0.0) {
        return Err(Error::config("env.bandwidth", "must be positive"));
    }
    let mut groups: [Vec<Component>; 2] = [vec![], vec![]];
    for &(g, income) in records {
        if g > 1 {
            return Err(Error::Data(format!("group {g} is not 0 or 1")));
        }
        if !(income >= 0.0 && income.is_finite()) {
            return Err(Error::Data(format!(
                "income {income} in group {g} is negative or non-finite"
            )));
        }
        groups[g].push(Component {
            weight: 1.0,
            mean: income,
            sd: bandwidth,
        });
    }
    for (g, comps) in groups.iter().enumerate() {
        if comps.is_empty() {
            return Err(Error::Data(format!("group {g} has no income records")));
        }
    }
    let [a, b] = groups;
    Ok([IncomeDensity::new(a)?, IncomeDensity::new(b)?])
}

/// Read `group,income` rows.
pub fn read_income_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        group: usize,
        income: f64,
    }
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["group", "income"] {
        return Err(Error::Data(format!(
            "{}: expected header `group,income`",
            path.display()
        )));
    }
    reader
        .deserialize::<Row>()
        .map(|r| {
            r.map(|row| (row.group, row.income))
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// SNAP settings as written in a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapConfig {
    /// `group,income` CSV; the synthetic mixtures are used when absent.
    pub income_csv: Option<PathBuf>,
    pub bandwidth: f64,
    pub synthetic: [Vec<Component>; 2],
    /// `P(u = 1)` for synthetic incomes; CSV runs use the group frequencies.
    pub group1_prob: f64,
    pub sigma: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub poverty_line: f64,
    pub horizon: usize,
    /// Rewards are divided by this.
    pub reward_unit: f64,
    /// Incomes are divided by this in the policy input.
    pub income_unit: f64,
}

impl Default for SnapConfig {
    fn default() -> Self {
        SnapConfig {
            income_csv: None,
            bandwidth: 10_000.0,
            synthetic: [
                vec![Component {
                    weight: 1.0,
                    mean: 45_000.0,
                    sd: 15_000.0,
                }],
                vec![Component {
                    weight: 1.0,
                    mean: 28_000.0,
                    sd: 12_000.0,
                }],
            ],
            group1_prob: 0.5,
            sigma: 1_000.0,
            gamma_lo: 1_512.0,
            gamma_hi: 7_200.0,
            poverty_line: 24_900.0,
            horizon: 4,
            reward_unit: 1.0,
            income_unit: 10_000.0,
        }
    }
}

/// Benefit allocation: each step the agent gives or withholds a benefit and pays the
/// squared shortfall of the current income below the poverty line.
///
/// State is `x = [income]`, `u = [group]`. Action 0 withholds, action 1 gives.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapEnv {
    pub config: SnapConfig,
    groups: [IncomeDensity; 2],
    group1_prob: f64,
    spec: EnvSpec,
}

impl SnapEnv {
    pub fn new(config: SnapConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        if !(config.sigma > 0.0 && config.gamma_lo < config.gamma_hi) {
            return Err(Error::config(
                "env",
                "need sigma > 0 and gamma_lo < gamma_hi",
            ));
        }
        if !(config.reward_unit > 0.0 && config.income_unit > 0.0) {
            return Err(Error::config(
                "env",
                "reward_unit and income_unit must be positive",
            ));
        }
        let (groups, group1_prob) = match &config.income_csv {
            Some(path) => {
                let records = read_income_csv(path)?;
                let ones = records.iter().filter(|r| r.0 == 1).count();
                let p = ones as f64 / records.len().max(1) as f64;
                (fit_income_kde(&records, config.bandwidth)?, p)
            }
            None => {
                if !(0.0..=1.0).contains(&config.group1_prob) {
                    return Err(Error::config("env.group1_prob", "must lie in [0, 1]"));
                }
                let [a, b] = config.synthetic.clone();
                (
                    [IncomeDensity::new(a)?, IncomeDensity::new(b)?],
                    config.group1_prob,
                )
            }
        };
        let spec = EnvSpec {
            name: "snap".into(),
            horizon: config.horizon,
            action_count: 2,
            x_dim: 1,
            u_dim: 1,
            u_domain: UDomain::Categorical(2),
            u_constant: true,
            has_exact_dynamics: true,
            is_finite: false,
            input_dim: 3,
        };
        Ok(SnapEnv {
            config,
            groups,
            group1_prob,
            spec,
        })
    }

    pub fn income_density(&self, group: usize) -> &IncomeDensity {
        &self.groups[group]
    }

    pub fn reward(&self, income: f64) -> f64 {
        let gap = (self.config.poverty_line - income).max(0.0);
        -gap * gap / self.config.reward_unit
    }
}

impl Environment for SnapEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut Stream) -> FactoredState {
        let u = (rng.random::<f64>() < self.group1_prob) as usize;
        let income = self.groups[u].sample(rng);
        FactoredState::new(vec![income], vec![u as f64])
    }

    fn step(
        &self,
        state: &FactoredState,
        action: usize,
        rng: &mut Stream,
    ) -> Result<(FactoredState, f64)> {
        self.check_action(action)?;
        let income = state.x[0];
        let z: f64 = rng.sample(StandardNormal);
        let mut next = income + self.config.sigma * z;
        if action == 1 {
            next += rng.random_range(self.config.gamma_lo..self.config.gamma_hi);
        }
        Ok((
            FactoredState::new(vec![next], state.u.clone()),
            self.reward(income),
        ))
    }

    fn encode(&self, state: &FactoredState, out: &mut Vec<f64>) {
        let u = state.u_index();
        out.extend([
            state.x[0] / self.config.income_unit,
            (u == 0) as u8 as f64,
            (u == 1) as u8 as f64,
        ]);
    }

    /// Withholding leaves Gaussian noise; giving convolves it with the uniform benefit.
    fn transition_density(
        &self,
        state: &FactoredState,
        action: usize,
        next: &FactoredState,
    ) -> Result<f64> {
        self.check_action(action)?;
        if next.u != state.u {
            return Ok(0.0);
        }
        let d = next.x[0] - state.x[0];
        let s = self.config.sigma;
        if action == 0 {
            return Ok(gaussian_logpdf(d, 0.0, s * s)?.exp());
        }
        let (lo, hi) = (self.config.gamma_lo, self.config.gamma_hi);
        Ok((normal_cdf((d - lo) / s) - normal_cdf((d - hi) / s)) / (hi - lo))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng;

    fn env() -> SnapEnv {
        SnapEnv::new(SnapConfig::default()).unwrap()
    }

    fn st(income: f64, u: usize) -> FactoredState {
        FactoredState::new(vec![income], vec![u as f64])
    }

    #[test]
    fn reward_penalizes_shortfall_only() {
        let e = env();
        let (_, r) = e.step(&st(40_000.0, 0), 0, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(r, 0.0);
        let (_, r) = e.step(&st(20_000.0, 0), 0, &mut rng::stream(0, 0)).unwrap();
        assert_eq!(r, -2.401e7);
    }

    #[test]
    fn give_adds_uniform_benefit_on_average() {
        let e = env();
        let mut r = rng::stream(2, 0);
        let n = 100_000;
        let incs: Vec<f64> = (0..n)
            .map(|_| e.step(&st(10_000.0, 1), 1, &mut r).unwrap().0.x[0] - 10_000.0)
            .collect();
        let mean = incs.iter().sum::<f64>() / n as f64;
        let var = (5688.0f64.powi(2) / 12.0) + 1e6;
        assert!((mean - 4356.0).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn giving_dominates_withholding() {
        let e = env();
        let s = st(20_000.0, 0);
        let cdf = |a: usize, y: f64| {
            // midpoint quadrature of the density up to y
            let (lo, h) = (10_000.0, 5.0);
            let n = ((y - lo) / h) as usize;
            (0..n)
                .map(|i| {
                    e.transition_density(&s, a, &st(lo + (i as f64 + 0.5) * h, 0))
                        .unwrap()
                        * h
                })
                .sum::<f64>()
        };
        for y in [19_000.0, 20_000.0, 22_000.0, 25_000.0, 28_000.0] {
            assert!(cdf(1, y) <= cdf(0, y) + 1e-9);
        }
    }

    #[test]
    fn give_density_integrates_to_one() {
        let e = env();
        let s = st(0.0, 1);
        let h = 2.0;
        let total: f64 = (0..10_000)
            .map(|i| {
                e.transition_density(&s, 1, &st(-6_000.0 + (i as f64 + 0.5) * h, 1))
                    .unwrap()
                    * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_record_kde_is_one_kernel() {
        let kde = fit_income_kde(&[(0, 30_000.0), (1, 10_000.0), (1, 20_000.0)], 10_000.0).unwrap();
        let x = 37_000.0;
        let expect = gaussian_logpdf(x, 30_000.0, 1e8).unwrap().exp();
        assert!((kde[0].density(x) - expect).abs() < 1e-18);
        let avg = 0.5
            * (gaussian_logpdf(x, 10_000.0, 1e8).unwrap().exp()
                + gaussian_logpdf(x, 20_000.0, 1e8).unwrap().exp());
        assert!((kde[1].density(x) - avg).abs() < 1e-18);
    }

    #[test]
    fn kde_density_integrates_to_one() {
        let kde = fit_income_kde(&[(0, 5_000.0), (0, 60_000.0), (1, 0.0)], 10_000.0).unwrap();
        let h = 50.0;
        for d in &kde {
            let total: f64 = (0..6000)
                .map(|i| d.density(-100_000.0 + (i as f64 + 0.5) * h) * h)
                .sum();
            assert!((total - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn kde_sampler_mean() {
        let data = [(0, 12_000.0), (0, 30_000.0), (0, 51_000.0), (1, 1.0)];
        let kde = fit_income_kde(&data, 10_000.0).unwrap();
        let mut r = rng::stream(5, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| kde[0].sample(&mut r)).sum::<f64>() / n as f64;
        let data_mean = 31_000.0;
        let var = (19_000.0f64.powi(2) + 1_000.0f64.powi(2) + 20_000.0f64.powi(2)) / 3.0 + 1e8;
        assert!((mean - data_mean).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn empty_group_is_named() {
        let err = fit_income_kde(&[(0, 1.0), (0, 2.0)], 1.0).unwrap_err();
        assert!(err.to_string().contains("group 1"));
        assert!(fit_income_kde(&[(0, -1.0), (1, 2.0)], 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inc.csv");
        std::fs::write(&path, "group,income\n0,30000\n1,12000\n1,18000\n").unwrap();
        let cfg = SnapConfig {
            income_csv: Some(path.clone()),
            ..Default::default()
        };
        let e = SnapEnv::new(cfg).unwrap();
        assert_eq!(e.income_density(0).components().len(), 1);
        assert!((e.group1_prob - 2.0 / 3.0).abs() < 1e-15);
        std::fs::write(&path, "g,income\n0,1\n").unwrap();
        assert!(read_income_csv(&path).is_err());
    }
}
