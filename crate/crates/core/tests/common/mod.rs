#![allow(dead_code)]

pub mod oracle;

use cpl::distributions::{SmoothingFunction, SmoothingKind};
use cpl::geometry::{norm, LayoutKind, NormMode, Similarity};
use cpl::losses::{loss_total, BatchTargets, LossConfig, LossMode};
use cpl::model::{CplModel, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The six layout/similarity combinations of the main results table.
pub const VARIANTS: [&str; 6] = [
    "H-L",
    "H-S",
    "S-P (Euclidean)",
    "S-B (Euclidean)",
    "S-P (cosine)",
    "S-B (cosine)",
];

pub struct Shape {
    pub num_classes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub scale: f64,
    pub tau: f64,
    pub alpha: f64,
}

pub fn spec_for(variant: &str, shape: &Shape) -> ProblemSpec {
    let cosine = Similarity::Cosine { scale: shape.scale };
    let soft = |function| {
        (
            LayoutKind::SoftFree,
            LossMode::Soft,
            Some(SmoothingKind::new(function)),
        )
    };
    let poisson = SmoothingFunction::Poisson { tau: shape.tau };
    let binomial = SmoothingFunction::Binomial { tau: shape.tau };
    let (similarity, (layout, mode, smoothing)) = match variant {
        "H-L" => (Similarity::EuclideanT, (LayoutKind::HardLinear, LossMode::Hard, None)),
        "H-S" => (cosine, (LayoutKind::HardSemicircular, LossMode::Hard, None)),
        "S-P (Euclidean)" => (Similarity::EuclideanT, soft(poisson)),
        "S-B (Euclidean)" => (Similarity::EuclideanT, soft(binomial)),
        "S-P (cosine)" => (cosine, soft(poisson)),
        "S-B (cosine)" => (cosine, soft(binomial)),
        "H-L neg-euclidean" => (Similarity::NegEuclidean, (LayoutKind::HardLinear, LossMode::Hard, None)),
        "UPL" => (Similarity::EuclideanT, (LayoutKind::SoftFree, LossMode::Upl, None)),
        other => panic!("unknown variant {other}"),
    };
    ProblemSpec {
        num_classes: shape.num_classes,
        input_dim: shape.input_dim,
        hidden_dim: shape.hidden_dim,
        feature_dim: shape.feature_dim,
        similarity,
        layout,
        loss: LossConfig {
            mode,
            alpha: shape.alpha,
        },
        smoothing,
        norm_mode: NormMode::Learnable,
        v0_init_norm: None,
    }
}

/// Small random problem for `variant`.
pub fn random_shape(variant: &str, rng: &mut ChaCha8Rng) -> Shape {
    let min_d = if variant == "H-S" { 2 } else { 1 };
    Shape {
        num_classes: rng.random_range(2..=6),
        input_dim: rng.random_range(1..=4),
        hidden_dim: rng.random_range(2..=6),
        feature_dim: rng.random_range(min_d..=4),
        scale: rng.random_range(1.5..10.0),
        tau: rng.random_range(0.07..0.3),
        alpha: rng.random_range(0.0..8.0),
    }
}

/// Seeded model for a gradient check. Biases are randomized as well so that
/// every tensor carries a non-trivial gradient and cosine features are non-zero.
pub fn random_model(variant: &str, shape: &Shape, rng: &mut ChaCha8Rng, seed: u64) -> CplModel {
    let mut model = cpl::model::init_model(&spec_for(variant, shape), seed).expect("model");
    for b in [&mut model.extractor.b1, &mut model.extractor.b2] {
        let v = random_vec(rng, b.len());
        b.copy_from_slice(&v);
    }
    model
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both are ~0.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error between the analytic model gradient and central
/// differences over every trainable tensor, with the basic-loss targets frozen.
pub fn model_grad_error(model: &CplModel, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let batch: Vec<(&[f64], usize)> = xs.iter().map(Vec::as_slice).zip(labels.iter().copied()).collect();
    let out = model.loss_and_grad(&batch).expect("analytic gradient");
    let frozen = match model.spec.loss.mode {
        LossMode::Upl => Vec::new(),
        _ => model.proxy_targets().expect("targets"),
    };
    let analytic: Vec<Vec<f64>> = out.grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.tensors_mut()[t][i] += delta;
                m.batch_loss(&batch, Some(&frozen)).expect("perturbed loss")
            };
            numeric[i] = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(grad, &numeric));
    }
    worst
}

/// Same check for the gradient with respect to the embedding `f`.
pub fn feature_grad_error(model: &CplModel, f: &[f64], label: usize) -> f64 {
    let spec = &model.spec;
    let proxies = model.proxy_set().expect("proxies");
    let targets = BatchTargets::new(&proxies, spec.similarity, spec.layout, spec.loss, spec.smoothing)
        .expect("targets");
    let value = |g: &[f64]| {
        loss_total(g, label, &proxies, spec.similarity, spec.loss, &targets)
            .expect("loss")
    };
    let analytic = value(f).grad_feature;
    let numeric: Vec<f64> = (0..f.len())
        .map(|i| {
            let mut up = f.to_vec();
            let mut down = f.to_vec();
            up[i] += FD_STEP;
            down[i] -= FD_STEP;
            (value(&up).value - value(&down).value) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(&analytic, &numeric)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Total-variation distance from the uniform distribution.
pub fn tv_from_uniform(probs: &[f64]) -> f64 {
    let u = 1.0 / probs.len() as f64;
    0.5 * probs.iter().map(|p| (p - u).abs()).sum::<f64>()
}

/// Non-increasing on both sides of `mode`, and `mode` is the first argmax.
pub fn is_unimodal_at(probs: &[f64], mode: usize) -> bool {
    let left = probs[..=mode].windows(2).all(|w| w[0] <= w[1]);
    let right = probs[mode..].windows(2).all(|w| w[0] >= w[1]);
    let first_max = probs[..mode].iter().all(|p| *p < probs[mode]);
    left && right && first_max
}
