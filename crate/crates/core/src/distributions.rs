//! Categorical distributions over ordinal classes: the sample-to-proxies
//! assignment `P(f)`, the proxy-to-proxies target `Q(k*)`, and the unimodal
//! smoothed labels `U(k*)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CplError, Result};
use crate::geometry::{ProxySet, Similarity};

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CategoricalDistribution {
    /// Builds a distribution from already-normalized log-probabilities.
    fn from_log_probs(log_probs: Vec<f64>) -> Self {
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        CategoricalDistribution { probs, log_probs }
    }

    /// Wraps a probability vector that is normalized by construction.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(CplError::config("empty distribution"));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(CplError::numeric("probabilities must be finite and positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CplError::numeric(format!("probabilities sum to {total}")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(CategoricalDistribution { probs, log_probs })
    }

    pub fn uniform(k: usize) -> Self {
        CategoricalDistribution::from_log_probs(vec![-(k as f64).ln(); k])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the smaller index.
    pub fn mode(&self) -> usize {
        argmax(&self.log_probs)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
            .sum::<f64>()
    }

    pub fn total_variation(&self, other: &CategoricalDistribution) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-shifted softmax, evaluated in log-space.
pub fn softmax(logits: &[f64]) -> Result<CategoricalDistribution> {
    if logits.is_empty() {
        return Err(CplError::config("softmax over zero classes"));
    }
    if logits.iter().any(|z| z.is_nan()) {
        return Err(CplError::numeric("NaN logit"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(CplError::numeric("non-finite logits"));
    }
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    Ok(CategoricalDistribution::from_log_probs(
        logits.iter().map(|z| z - lse).collect(),
    ))
}

/// Similarity logits `sim(f, p_k)` for every proxy.
pub fn similarity_logits(f: &[f64], proxies: &ProxySet, kind: Similarity) -> Result<Vec<f64>> {
    proxies.iter().map(|p| kind.eval(f, p)).collect()
}

/// `P(f)`: softmax over the similarities between `f` and all proxies.
pub fn assignment_distribution(
    f: &[f64],
    proxies: &ProxySet,
    kind: Similarity,
) -> Result<CategoricalDistribution> {
    softmax(&similarity_logits(f, proxies, kind)?)
}

/// `Q(k*)`: softmax over the similarities between `p_{k*}` and all proxies,
/// including `p_{k*}` itself.
pub fn proxy_distribution(
    k_star: usize,
    proxies: &ProxySet,
    kind: Similarity,
) -> Result<CategoricalDistribution> {
    if k_star >= proxies.len() {
        return Err(CplError::config(format!(
            "class {k_star} out of range for {} proxies",
            proxies.len()
        )));
    }
    assignment_distribution(proxies.get(k_star), proxies, kind)
}

fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Scaled Poisson log-mass with rate `k* + 1/2`.
pub fn smoothing_poisson(k: usize, k_star: usize, tau_p: f64) -> f64 {
    let lambda = k_star as f64 + 0.5;
    (k as f64 * lambda.ln() - lambda - ln_factorial(k)) / tau_p
}

/// Scaled Binomial log-mass over `K − 1` trials with `p = (2k* + 1)/(2K)`.
pub fn smoothing_binomial(k: usize, k_star: usize, num_classes: usize, tau_b: f64) -> f64 {
    let n = num_classes - 1;
    let p = (2 * k_star + 1) as f64 / (2 * num_classes) as f64;
    (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()) / tau_b
}

fn exponential_log_weights(k_star: usize, num_classes: usize, tau_e: f64) -> Vec<f64> {
    (0..num_classes)
        .map(|j| -(j.abs_diff(k_star) as f64) / tau_e)
        .collect()
}

/// `exp(−|k − k*|/τ_e)` normalized over all classes.
pub fn smoothing_exponential(k: usize, k_star: usize, num_classes: usize, tau_e: f64) -> f64 {
    let w = exponential_log_weights(k_star, num_classes, tau_e);
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|x| (x - m).exp()).sum();
    (w[k] - m).exp() / z
}

fn triangular_weights(k_star: usize, num_classes: usize, a: f64, b: f64) -> Vec<f64> {
    let span = k_star.max(num_classes - k_star - 1) as f64;
    (0..num_classes)
        .map(|j| a - (a - b) * j.abs_diff(k_star) as f64 / span)
        .collect()
}

/// Triangle peaking at `a` on `k*` and falling to `b` at the farthest class,
/// normalized over all classes.
pub fn smoothing_triangular(k: usize, k_star: usize, num_classes: usize, a: f64, b: f64) -> f64 {
    let w = triangular_weights(k_star, num_classes, a, b);
    w[k] / w.iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmoothingFunction {
    Poisson { tau: f64 },
    Binomial { tau: f64 },
    Exponential { tau: f64 },
    Triangular { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Softmax over the smoothing scores.
    Softmax,
    /// Smoothing scores are already probabilities and are used as-is.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingKind {
    pub function: SmoothingFunction,
    pub normalization: Normalization,
}

impl SmoothingKind {
    /// Poisson and Binomial produce log-scores and go through softmax; the
    /// exponential and triangular functions are already normalized.
    pub fn new(function: SmoothingFunction) -> Self {
        let normalization = match function {
            SmoothingFunction::Poisson { .. } | SmoothingFunction::Binomial { .. } => {
                Normalization::Softmax
            }
            _ => Normalization::Direct,
        };
        SmoothingKind {
            function,
            normalization,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.function {
            SmoothingFunction::Poisson { tau }
            | SmoothingFunction::Binomial { tau }
            | SmoothingFunction::Exponential { tau } => tau > 0.0 && tau.is_finite(),
            SmoothingFunction::Triangular { a, b } => a > b && b > 0.0 && a.is_finite(),
        };
        let log_scores = matches!(
            self.function,
            SmoothingFunction::Poisson { .. } | SmoothingFunction::Binomial { .. }
        );
        if log_scores && self.normalization == Normalization::Direct {
            return Err(CplError::config(
                "poisson/binomial scores are log-masses and need softmax normalization",
            ));
        }
        if ok {
            Ok(())
        } else {
            Err(CplError::config(format!(
                "invalid smoothing parameters: {:?}",
                self.function
            )))
        }
    }

    /// Raw smoothing scores `E(k; k*)` for every class.
    pub fn scores(&self, k_star: usize, num_classes: usize) -> Vec<f64> {
        match self.function {
            SmoothingFunction::Poisson { tau } => (0..num_classes)
                .map(|k| smoothing_poisson(k, k_star, tau))
                .collect(),
            SmoothingFunction::Binomial { tau } => (0..num_classes)
                .map(|k| smoothing_binomial(k, k_star, num_classes, tau))
                .collect(),
            SmoothingFunction::Exponential { tau } => (0..num_classes)
                .map(|k| smoothing_exponential(k, k_star, num_classes, tau))
                .collect(),
            SmoothingFunction::Triangular { a, b } => (0..num_classes)
                .map(|k| smoothing_triangular(k, k_star, num_classes, a, b))
                .collect(),
        }
    }
}

/// `U(k*)`, the unimodal smoothed label distribution centred on `k*`.
pub fn unimodal_target(
    k_star: usize,
    kind: SmoothingKind,
    num_classes: usize,
) -> Result<CategoricalDistribution> {
    kind.validate()?;
    if num_classes < 2 {
        return Err(CplError::config("unimodal targets need K >= 2"));
    }
    if k_star >= num_classes {
        return Err(CplError::config(format!(
            "class {k_star} out of range for K = {num_classes}"
        )));
    }
    match kind.normalization {
        Normalization::Softmax => softmax(&kind.scores(k_star, num_classes)),
        Normalization::Direct => match kind.function {
            SmoothingFunction::Poisson { .. } | SmoothingFunction::Binomial { .. } => {
                unreachable!("rejected by validate")
            }
            // exact in log-space, so far tails never underflow to log 0
            SmoothingFunction::Exponential { tau } => {
                softmax(&exponential_log_weights(k_star, num_classes, tau))
            }
            SmoothingFunction::Triangular { a, b } => {
                let w = triangular_weights(k_star, num_classes, a, b);
                let total: f64 = w.iter().sum();
                CategoricalDistribution::from_probs(w.iter().map(|x| x / total).collect())
            }
        },
    }
}
