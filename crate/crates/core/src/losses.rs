//! KL-divergence losses with analytic backward passes.
//!
//! The proxy-to-proxies distribution `Q(k*)` is a fixed target inside the basic
//! loss: its value depends on the proxies, but no gradient flows through it
//! there. Only the unimodal loss differentiates `Q`.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    proxy_distribution, similarity_logits, softmax, unimodal_target, CategoricalDistribution,
    SmoothingKind,
};
use crate::error::{CplError, Result};
use crate::geometry::{LayoutKind, ProxySet, Similarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Basic loss only.
    Hard,
    /// Basic loss plus `alpha` times the unimodal loss.
    Soft,
    /// Cross-entropy against one-hot labels on free proxies (UPL baseline).
    Upl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub alpha: f64,
}

impl LossConfig {
    pub fn validate(&self, layout: LayoutKind) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(CplError::config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        match (self.mode, layout.is_hard()) {
            (LossMode::Hard, false) => Err(CplError::config(
                "hard loss mode requires a hard layout (hard-linear or hard-semicircular)",
            )),
            (LossMode::Soft, true) | (LossMode::Upl, true) => Err(CplError::config(format!(
                "{:?} mode requires the soft-free layout, got {layout:?}",
                self.mode
            ))),
            _ => Ok(()),
        }
    }
}

/// A loss value with gradients with respect to the feature and each proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `dL/df`; empty when the loss does not depend on a feature.
    pub grad_feature: Vec<f64>,
    /// `dL/dp_k` for every proxy.
    pub grad_proxies: Vec<Vec<f64>>,
    /// Number of similarity evaluations whose derivative was undefined.
    pub singular: usize,
}

impl LossOutput {
    fn zeros(num_classes: usize, dim: usize, with_feature: bool) -> Self {
        LossOutput {
            value: 0.0,
            grad_feature: if with_feature { vec![0.0; dim] } else { Vec::new() },
            grad_proxies: vec![vec![0.0; dim]; num_classes],
            singular: 0,
        }
    }

    /// `self += scale · other`.
    pub fn accumulate(&mut self, other: &LossOutput, scale: f64) {
        self.value += scale * other.value;
        if self.grad_feature.is_empty() {
            self.grad_feature = vec![0.0; other.grad_feature.len()];
        }
        for (a, b) in self.grad_feature.iter_mut().zip(&other.grad_feature) {
            *a += scale * b;
        }
        for (ga, gb) in self.grad_proxies.iter_mut().zip(&other.grad_proxies) {
            for (a, b) in ga.iter_mut().zip(gb) {
                *a += scale * b;
            }
        }
        self.singular += other.singular;
    }
}

/// `(1/K)·KL(Q‖P)` computed from log-probabilities.
pub fn kl_basic(
    target: &CategoricalDistribution,
    pred: &CategoricalDistribution,
    num_classes: usize,
) -> Result<f64> {
    if target.len() != pred.len() || target.len() != num_classes {
        return Err(CplError::config(format!(
            "distribution lengths {} and {} do not match K = {num_classes}",
            target.len(),
            pred.len()
        )));
    }
    let kl: f64 = target
        .probs()
        .iter()
        .zip(target.log_probs())
        .zip(pred.log_probs())
        .map(|((q, lq), lp)| if *q > 0.0 { q * (lq - lp) } else { 0.0 })
        .sum();
    Ok(kl / num_classes as f64)
}

/// Backpropagates `dL/dz_k` through the logits `z_k = sim(f, p_k)`.
fn backprop_logits(
    f: &[f64],
    proxies: &ProxySet,
    kind: Similarity,
    grad_logits: &[f64],
    out: &mut LossOutput,
    feature_is_proxy: Option<usize>,
) -> Result<()> {
    for (k, (p, gz)) in proxies.iter().zip(grad_logits).enumerate() {
        // sim(p, p) is constant for every kind, so the self term carries no gradient
        if *gz == 0.0 || feature_is_proxy == Some(k) {
            continue;
        }
        let g = kind.grad(f, p)?;
        if g.singular {
            out.singular += 1;
        }
        match feature_is_proxy {
            Some(j) => {
                for (a, b) in out.grad_proxies[j].iter_mut().zip(&g.wrt_feature) {
                    *a += gz * b;
                }
            }
            None => {
                for (a, b) in out.grad_feature.iter_mut().zip(&g.wrt_feature) {
                    *a += gz * b;
                }
            }
        }
        for (a, b) in out.grad_proxies[k].iter_mut().zip(&g.wrt_proxy) {
            *a += gz * b;
        }
    }
    Ok(())
}

/// Basic loss against a precomputed (detached) target distribution.
pub fn loss_basic_with_target(
    f: &[f64],
    target: &CategoricalDistribution,
    proxies: &ProxySet,
    kind: Similarity,
) -> Result<LossOutput> {
    let k = proxies.len();
    let pred = softmax(&similarity_logits(f, proxies, kind)?)?;
    let value = kl_basic(target, &pred, k)?;
    // d/dz_j of (1/K)Σ Q(log Q − log P) is (P_j − Q_j)/K
    let grad_logits: Vec<f64> = pred
        .probs()
        .iter()
        .zip(target.probs())
        .map(|(p, q)| (p - q) / k as f64)
        .collect();
    let mut out = LossOutput::zeros(k, proxies.dim(), true);
    out.value = value;
    backprop_logits(f, proxies, kind, &grad_logits, &mut out, None)?;
    Ok(out)
}

/// `L_basic = (1/K)·KL(Q(k*) ‖ P(f))` with `Q(k*)` held constant.
pub fn loss_basic(
    f: &[f64],
    k_star: usize,
    proxies: &ProxySet,
    kind: Similarity,
) -> Result<LossOutput> {
    let target = proxy_distribution(k_star, proxies, kind)?;
    loss_basic_with_target(f, &target, proxies, kind)
}

/// `L_unimodal = (1/K)·KL(U(k*) ‖ Q(k*))`; gradients flow through `Q` into the
/// free proxies.
pub fn loss_unimodal(
    k_star: usize,
    proxies: &ProxySet,
    kind: Similarity,
    smoothing: SmoothingKind,
    layout: LayoutKind,
) -> Result<LossOutput> {
    if layout.is_hard() {
        return Err(CplError::config(
            "the unimodal loss applies to the soft-free layout only",
        ));
    }
    let k = proxies.len();
    let target = unimodal_target(k_star, smoothing, k)?;
    let q = proxy_distribution(k_star, proxies, kind)?;
    let value = kl_basic(&target, &q, k)?;
    let grad_logits: Vec<f64> = q
        .probs()
        .iter()
        .zip(target.probs())
        .map(|(qk, uk)| (qk - uk) / k as f64)
        .collect();
    let mut out = LossOutput::zeros(k, proxies.dim(), false);
    out.value = value;
    let anchor = proxies.get(k_star).to_vec();
    backprop_logits(&anchor, proxies, kind, &grad_logits, &mut out, Some(k_star))?;
    Ok(out)
}

/// `-log P_{k*}(f)`, the UPL baseline objective.
pub fn loss_cross_entropy(
    f: &[f64],
    k_star: usize,
    proxies: &ProxySet,
    kind: Similarity,
) -> Result<LossOutput> {
    let k = proxies.len();
    if k_star >= k {
        return Err(CplError::config(format!("class {k_star} out of range")));
    }
    let pred = softmax(&similarity_logits(f, proxies, kind)?)?;
    let grad_logits: Vec<f64> = pred
        .probs()
        .iter()
        .enumerate()
        .map(|(j, p)| if j == k_star { p - 1.0 } else { *p })
        .collect();
    let mut out = LossOutput::zeros(k, proxies.dim(), true);
    out.value = -pred.log_probs()[k_star];
    backprop_logits(f, proxies, kind, &grad_logits, &mut out, None)?;
    Ok(out)
}

/// Per-class quantities that stay fixed while one batch is evaluated.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    /// Detached `Q(k)` for every class.
    pub proxy_targets: Vec<CategoricalDistribution>,
    /// Unimodal loss for every class (soft mode only).
    pub unimodal: Vec<LossOutput>,
}

impl BatchTargets {
    pub fn new(
        proxies: &ProxySet,
        kind: Similarity,
        layout: LayoutKind,
        config: LossConfig,
        smoothing: Option<SmoothingKind>,
    ) -> Result<Self> {
        let k = proxies.len();
        let proxy_targets = match config.mode {
            LossMode::Upl => Vec::new(),
            _ => (0..k)
                .map(|c| proxy_distribution(c, proxies, kind))
                .collect::<Result<_>>()?,
        };
        let unimodal = match config.mode {
            LossMode::Soft => {
                let smoothing = smoothing
                    .ok_or_else(|| CplError::config("soft mode needs a smoothing function"))?;
                (0..k)
                    .map(|c| loss_unimodal(c, proxies, kind, smoothing, layout))
                    .collect::<Result<_>>()?
            }
            _ => Vec::new(),
        };
        Ok(BatchTargets {
            proxy_targets,
            unimodal,
        })
    }
}

/// Per-sample objective: `L_H = L_basic`, `L_S = L_basic + α·L_unimodal`, or
/// cross-entropy in UPL mode.
pub fn loss_total(
    f: &[f64],
    k_star: usize,
    proxies: &ProxySet,
    kind: Similarity,
    config: LossConfig,
    targets: &BatchTargets,
) -> Result<LossOutput> {
    if k_star >= proxies.len() {
        return Err(CplError::config(format!("class {k_star} out of range")));
    }
    match config.mode {
        LossMode::Upl => loss_cross_entropy(f, k_star, proxies, kind),
        LossMode::Hard => {
            loss_basic_with_target(f, &targets.proxy_targets[k_star], proxies, kind)
        }
        LossMode::Soft => {
            let mut out =
                loss_basic_with_target(f, &targets.proxy_targets[k_star], proxies, kind)?;
            if config.alpha != 0.0 {
                out.accumulate(&targets.unimodal[k_star], config.alpha);
            }
            Ok(out)
        }
    }
}
