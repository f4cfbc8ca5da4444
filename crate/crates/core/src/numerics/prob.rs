//! Probability helpers. All logs are natural.

use rand::Rng;

use crate::error::{Error, Result};

/// Floor applied to log-probabilities before they enter MI log-ratios.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Floor for Gaussian variances in discriminator heads and marginals.
pub const VARIANCE_FLOOR: f64 = 1e-6;

pub fn clamp_log_prob(lp: f64) -> f64 {
    if lp.is_nan() {
        lp
    } else {
        lp.max(LOG_PROB_FLOOR)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    for v in &mut e {
        *v /= s;
    }
    e
}

/// Shannon entropy of a probability vector.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Draw an index from `probs` by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs
        .iter()
        .rposition(|p| *p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// Sample from softmax(logits); returns the index and its log-probability.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64)> {
    if logits.is_empty() {
        return Err(Error::contract("categorical over zero outcomes"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::divergence("non-finite logits"));
    }
    let lp = log_softmax(logits);
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let i = sample_index(&probs, rng);
    Ok((i, lp[i]))
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn gaussian_logpdf(x: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::contract(format!(
            "gaussian variance must be positive, got {variance}"
        )));
    }
    let d = x - mean;
    Ok(-0.5 * (LN_2PI + variance.ln() + d * d / variance))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}
