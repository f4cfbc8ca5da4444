use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Arms with fewer samples than this are left out of the estimate.
pub const MIN_ARM_SAMPLES: usize = 30;

/// Kernel bandwidth choice. Scott's rule is applied once to the pooled sample and
/// shared by every entropy term so their biases largely cancel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    Scott,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KdeMi {
    pub nats: f64,
    pub bandwidth: f64,
    pub skipped_arms: Vec<usize>,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Leave-one-out resubstitution entropy of `values` with a Gaussian kernel.
fn loo_entropy(values: &[f64], h: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let reach = 8.0 * h;
    let log_norm = LN_SQRT_2PI + h.ln() + ((n - 1) as f64).ln();
    let logs = par::map_range(n, |i| {
        let x = sorted[i];
        let mut sum = 0.0;
        let mut j = i;
        while j > 0 && x - sorted[j - 1] <= reach {
            j -= 1;
            sum += (-0.5 * ((x - sorted[j]) / h).powi(2)).exp();
        }
        let mut j = i + 1;
        while j < n && sorted[j] - x <= reach {
            sum += (-0.5 * ((sorted[j] - x) / h).powi(2)).exp();
            j += 1;
        }
        if sum > 0.0 {
            sum.ln() - log_norm
        } else {
            // isolated point: keep only the closest neighbour, which is adjacent once sorted
            let left = if i > 0 {
                x - sorted[i - 1]
            } else {
                f64::INFINITY
            };
            let right = if i + 1 < n {
                sorted[i + 1] - x
            } else {
                f64::INFINITY
            };
            -0.5 * (left.min(right) / h).powi(2) - log_norm
        }
    });
    -par::tree_sum(&logs) / n as f64
}

fn scott(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if sd > 0.0 {
        sd * n.powf(-0.2)
    } else {
        1.0
    }
}

/// `I(u; a) ≈ H(u) - Σ_a p̂(a) H(u|a)` for real `u` and categorical `a`.
pub fn kde_mi(pairs: &[(f64, usize)], bandwidth: Bandwidth) -> Result<KdeMi> {
    let arms = pairs.iter().map(|p| p.1).max().map_or(0, |m| m + 1);
    let mut by_arm: Vec<Vec<f64>> = vec![vec![]; arms];
    for &(u, a) in pairs {
        if !u.is_finite() {
            return Err(Error::Estimation("non-finite sample in KDE input".into()));
        }
        by_arm[a].push(u);
    }
    let skipped_arms: Vec<usize> = (0..arms)
        .filter(|a| !by_arm[*a].is_empty() && by_arm[*a].len() < MIN_ARM_SAMPLES)
        .collect();
    let kept: Vec<&Vec<f64>> = by_arm
        .iter()
        .filter(|v| v.len() >= MIN_ARM_SAMPLES)
        .collect();
    if kept.is_empty() {
        return Err(Error::Estimation(format!(
            "every action arm has fewer than {MIN_ARM_SAMPLES} samples"
        )));
    }
    let pooled: Vec<f64> = kept.iter().flat_map(|v| v.iter().copied()).collect();
    let h = match bandwidth {
        Bandwidth::Scott => scott(&pooled),
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(h) => {
            return Err(Error::config(
                "kde.bandwidth",
                format!("must be positive, got {h}"),
            ))
        }
    };
    let n = pooled.len() as f64;
    let conditional: f64 = kept
        .iter()
        .map(|v| v.len() as f64 / n * loo_entropy(v, h))
        .sum();
    Ok(KdeMi {
        nats: loo_entropy(&pooled, h) - conditional,
        bandwidth: h,
        skipped_arms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::prob::normal_cdf;
    use crate::numerics::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn independent_arms_near_zero() {
        let mut r = rng::stream(11, 0);
        let pairs: Vec<_> = (0..10_000)
            .map(|i| (r.sample::<f64, _>(StandardNormal), i % 3))
            .collect();
        let est = kde_mi(&pairs, Bandwidth::Scott).unwrap();
        assert!(est.nats.abs() <= 0.03, "{}", est.nats);
    }

    #[test]
    fn quantized_bivariate_normal_matches_quadrature() {
        let rho: f64 = 0.5;
        let mut r = rng::stream(12, 0);
        let pairs: Vec<_> = (0..20_000)
            .map(|_| {
                let z1: f64 = r.sample(StandardNormal);
                let z2: f64 = r.sample(StandardNormal);
                let y = rho * z1 + (1.0 - rho * rho).sqrt() * z2;
                (z1, (y > 0.0) as usize)
            })
            .collect();
        // I = ln 2 - E_u[h(P(a=1|u))] with P(a=1|u) = Φ(ρu/√(1-ρ²)), by midpoint quadrature
        let k = rho / (1.0 - rho * rho).sqrt();
        let step = 1e-3;
        let mut cond = 0.0;
        for i in 0..16_000 {
            let u = -8.0 + (i as f64 + 0.5) * step;
            let p = normal_cdf(k * u);
            let hb = -[p, 1.0 - p]
                .iter()
                .filter(|q| **q > 0.0)
                .map(|q| q * q.ln())
                .sum::<f64>();
            cond += step * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt() * hb;
        }
        let exact = 2f64.ln() - cond;
        let est = kde_mi(&pairs, Bandwidth::Scott).unwrap().nats;
        assert!(
            (est - exact).abs() <= 0.1 * exact,
            "kde {est} vs quadrature {exact}"
        );
    }

    #[test]
    fn separated_point_masses() {
        let pairs: Vec<_> = (0..4000).map(|i| ((i % 4) as f64 * 3.0, i % 4)).collect();
        let est = kde_mi(&pairs, Bandwidth::Scott).unwrap();
        assert!(est.nats >= 0.9 * 4f64.ln(), "{}", est.nats);
    }

    #[test]
    fn small_arms_are_skipped() {
        let mut pairs: Vec<_> = (0..100).map(|i| (i as f64 * 0.01, 0)).collect();
        pairs.extend((0..5).map(|i| (i as f64, 1)));
        let est = kde_mi(&pairs, Bandwidth::Fixed(0.1)).unwrap();
        assert_eq!(est.skipped_arms, vec![1]);
        let few: Vec<_> = (0..10).map(|i| (i as f64, i % 2)).collect();
        assert!(matches!(
            kde_mi(&few, Bandwidth::Scott),
            Err(Error::Estimation(_))
        ));
    }
}
