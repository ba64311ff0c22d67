//! Feature extractor + proxy learner, composed into a trainable model.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{argmax, similarity_logits, CategoricalDistribution, SmoothingKind};
use crate::error::{CplError, Result};
use crate::geometry::{LayoutKind, NormMode, ProxyLearner, ProxySet, Similarity};
use crate::losses::{loss_total, BatchTargets, LossConfig, LossMode};

/// Static description of a model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Dimension `d` shared by features and proxies.
    pub feature_dim: usize,
    pub similarity: Similarity,
    pub layout: LayoutKind,
    pub loss: LossConfig,
    pub smoothing: Option<SmoothingKind>,
    pub norm_mode: NormMode,
    /// Rescales the initial `v0` of the linear layout to this norm.
    pub v0_init_norm: Option<f64>,
}

/// Which of the supported configurations a spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// One of the six main layout/similarity/loss combinations.
    Named(&'static str),
    /// Valid but outside the main table (ablations, extra smoothing functions, UPL).
    Experimental,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Named(name) => f.write_str(name),
            Variant::Experimental => f.write_str("experimental"),
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<Variant> {
        if self.num_classes < 2 {
            return Err(CplError::config("num_classes must be >= 2"));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.feature_dim == 0 {
            return Err(CplError::config("layer sizes must be >= 1"));
        }
        self.similarity.validate()?;
        self.loss.validate(self.layout)?;
        if let Some(s) = &self.smoothing {
            s.validate()?;
        }
        if self.loss.mode == LossMode::Soft && self.smoothing.is_none() {
            return Err(CplError::config("soft mode requires a smoothing function"));
        }
        if let NormMode::Fixed(_) = self.norm_mode {
            if self.layout != LayoutKind::HardLinear {
                return Err(CplError::config("fixed v0 norm applies to hard-linear only"));
            }
        }
        if let Some(n) = self.v0_init_norm {
            if !(n > 0.0) || !n.is_finite() {
                return Err(CplError::config("v0_init_norm must be > 0"));
            }
        }
        match (self.layout, self.similarity) {
            (LayoutKind::HardLinear, Similarity::Cosine { .. }) => {
                return Err(CplError::config(
                    "hard-linear places p_0 at the origin, which cosine similarity cannot score",
                ))
            }
            (LayoutKind::HardSemicircular, _) if self.feature_dim < 2 => {
                return Err(CplError::config("hard-semicircular needs feature_dim >= 2"))
            }
            _ => {}
        }
        use crate::distributions::SmoothingFunction as F;
        let smoothing = self.smoothing.map(|s| s.function);
        let name = match (self.layout, self.similarity, self.loss.mode, smoothing) {
            (LayoutKind::HardLinear, Similarity::EuclideanT, LossMode::Hard, _) => "H-L",
            (LayoutKind::HardSemicircular, Similarity::Cosine { .. }, LossMode::Hard, _) => "H-S",
            (LayoutKind::SoftFree, Similarity::EuclideanT, LossMode::Soft, Some(F::Poisson { .. })) => {
                "S-P (Euclidean)"
            }
            (LayoutKind::SoftFree, Similarity::Cosine { .. }, LossMode::Soft, Some(F::Poisson { .. })) => {
                "S-P (cosine)"
            }
            (LayoutKind::SoftFree, Similarity::EuclideanT, LossMode::Soft, Some(F::Binomial { .. })) => {
                "S-B (Euclidean)"
            }
            (LayoutKind::SoftFree, Similarity::Cosine { .. }, LossMode::Soft, Some(F::Binomial { .. })) => {
                "S-B (cosine)"
            }
            _ => return Ok(Variant::Experimental),
        };
        Ok(Variant::Named(name))
    }
}

/// Two-layer perceptron `x ↦ W2·relu(W1·x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `hidden_dim × input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output_dim × hidden_dim`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExtractorCache {
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl FeatureExtractor {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        FeatureExtractor {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    fn check(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden_dim * self.input_dim
            && self.b1.len() == self.hidden_dim
            && self.w2.len() == self.output_dim * self.hidden_dim
            && self.b2.len() == self.output_dim;
        if ok {
            Ok(())
        } else {
            Err(CplError::config("extractor parameter shapes do not match layer sizes"))
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ExtractorCache)> {
        if x.len() != self.input_dim {
            return Err(CplError::config(format!(
                "input has dimension {}, extractor expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let hidden: Vec<f64> = self
            .w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b).max(0.0))
            .collect();
        let out = self
            .w2
            .chunks_exact(self.hidden_dim)
            .zip(&self.b2)
            .map(|(row, b)| row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b)
            .collect();
        Ok((out, ExtractorCache { hidden }))
    }

    /// Accumulates `dL/dθ` for one sample into `grads`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &ExtractorCache,
        grad_out: &[f64],
        grads: &mut ExtractorGrads,
    ) {
        let h = self.hidden_dim;
        let mut grad_hidden = vec![0.0; h];
        for (o, g) in grad_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let row = &self.w2[o * h..(o + 1) * h];
            let grow = &mut grads.w2[o * h..(o + 1) * h];
            for j in 0..h {
                grow[j] += g * cache.hidden[j];
                grad_hidden[j] += g * row[j];
            }
        }
        let n = self.input_dim;
        for j in 0..h {
            // relu' is taken as 0 at the kink
            if cache.hidden[j] <= 0.0 {
                continue;
            }
            let g = grad_hidden[j];
            grads.b1[j] += g;
            for (acc, xi) in grads.w1[j * n..(j + 1) * n].iter_mut().zip(x) {
                *acc += g * xi;
            }
        }
    }

    fn zero_grads(&self) -> ExtractorGrads {
        ExtractorGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }
}

/// Gradients for every trainable tensor of a [`CplModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub extractor: ExtractorGrads,
    pub proxies: Vec<Vec<f64>>,
}

impl ModelGrads {
    /// Tensors in the same order as [`CplModel::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let e = &self.extractor;
        let mut out: Vec<&[f64]> = vec![&e.w1, &e.b1, &e.w2, &e.b2];
        out.extend(self.proxies.iter().map(Vec::as_slice));
        out
    }
}

/// Number of extractor tensors at the front of the tensor list.
pub const EXTRACTOR_TENSORS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CplModel {
    pub spec: ProblemSpec,
    pub extractor: FeatureExtractor,
    pub proxies: ProxyLearner,
}

/// Aggregate loss and gradients over a batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub loss: f64,
    pub grads: ModelGrads,
    pub singular: usize,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Builds a model whose parameters are fully determined by `seed`: Xavier-normal
/// weights and proxy vectors, zero biases.
pub fn init_model(spec: &ProblemSpec, seed: u64) -> Result<CplModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_in, h, d) = (spec.input_dim, spec.hidden_dim, spec.feature_dim);
    let mut extractor = FeatureExtractor::zeros(n_in, h, d);
    extractor.w1 = xavier(&mut rng, n_in, h, h * n_in);
    extractor.w2 = xavier(&mut rng, h, d, d * h);

    let n = spec.layout.param_count(spec.num_classes);
    let mut vectors: Vec<Vec<f64>> = xavier(&mut rng, d, n, n * d)
        .chunks_exact(d)
        .map(<[f64]>::to_vec)
        .collect();
    if let (LayoutKind::HardLinear, Some(c)) = (spec.layout, spec.v0_init_norm) {
        let norm = crate::geometry::norm(&vectors[0]);
        vectors[0].iter_mut().for_each(|x| *x *= c / norm);
    }
    let mut learner = loop {
        match ProxyLearner::new(spec.layout, spec.num_classes, spec.norm_mode, vectors.clone()) {
            Ok(l) => break l,
            // a zero or parallel draw; redraw from the same stream
            Err(CplError::DegenerateVector(_)) | Err(CplError::DegeneratePlane(_)) => {
                vectors = xavier(&mut rng, d, n, n * d)
                    .chunks_exact(d)
                    .map(<[f64]>::to_vec)
                    .collect();
            }
            Err(e) => return Err(e),
        }
    };
    learner.project()?;
    Ok(CplModel {
        spec: spec.clone(),
        extractor,
        proxies: learner,
    })
}

impl CplModel {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.extractor.check()?;
        let e = &self.extractor;
        if (e.input_dim, e.hidden_dim, e.output_dim)
            != (self.spec.input_dim, self.spec.hidden_dim, self.spec.feature_dim)
        {
            return Err(CplError::config("extractor sizes disagree with the problem spec"));
        }
        if self.proxies.dim() != self.spec.feature_dim
            || self.proxies.num_classes != self.spec.num_classes
            || self.proxies.layout != self.spec.layout
        {
            return Err(CplError::config("proxy learner disagrees with the problem spec"));
        }
        self.proxies.proxies()?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.extractor.forward(x)?.0)
    }

    pub fn proxy_set(&self) -> Result<ProxySet> {
        self.proxies.proxies()
    }

    /// `argmax_k sim(F(x), p_k)`, smallest index on ties.
    pub fn predict_rank(&self, x: &[f64]) -> Result<usize> {
        let proxies = self.proxy_set()?;
        self.predict_with(x, &proxies)
    }

    pub fn predict_with(&self, x: &[f64], proxies: &ProxySet) -> Result<usize> {
        let f = self.extract(x)?;
        Ok(argmax(&similarity_logits(&f, proxies, self.spec.similarity)?))
    }

    /// Batch predictions with a single proxy generation.
    pub fn predict_many<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<usize>> {
        let proxies = self.proxy_set()?;
        xs.into_iter().map(|x| self.predict_with(x, &proxies)).collect()
    }

    fn batch_targets(&self, proxies: &ProxySet) -> Result<BatchTargets> {
        BatchTargets::new(
            proxies,
            self.spec.similarity,
            self.spec.layout,
            self.spec.loss,
            self.spec.smoothing,
        )
    }

    /// Detached proxy-to-proxies targets `Q(k)` for the current parameters.
    pub fn proxy_targets(&self) -> Result<Vec<CategoricalDistribution>> {
        Ok(self.batch_targets(&self.proxy_set()?)?.proxy_targets)
    }

    /// Mean loss over `batch`, optionally with the basic-loss targets frozen
    /// at externally supplied values.
    pub fn batch_loss(
        &self,
        batch: &[(&[f64], usize)],
        frozen_targets: Option<&[CategoricalDistribution]>,
    ) -> Result<f64> {
        let proxies = self.proxy_set()?;
        let mut targets = self.batch_targets(&proxies)?;
        if let Some(frozen) = frozen_targets {
            targets.proxy_targets = frozen.to_vec();
        }
        let mut total = 0.0;
        for (x, k) in batch {
            let f = self.extract(x)?;
            total += loss_total(&f, *k, &proxies, self.spec.similarity, self.spec.loss, &targets)?.value;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and its analytic gradient over `batch`.
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize)]) -> Result<BatchOutput> {
        if batch.is_empty() {
            return Err(CplError::config("empty batch"));
        }
        let k = self.num_classes();
        let proxies = self.proxy_set()?;
        let targets = self.batch_targets(&proxies)?;
        let d = self.spec.feature_dim;
        let scale = 1.0 / batch.len() as f64;

        let mut ext_grads = self.extractor.zero_grads();
        let mut proxy_grads = vec![vec![0.0; d]; k];
        let mut loss = 0.0;
        let mut singular = 0;
        for (x, label) in batch {
            let (f, cache) = self.extractor.forward(x)?;
            let mut out =
                loss_total(&f, *label, &proxies, self.spec.similarity, self.spec.loss, &targets)?;
            if !out.value.is_finite() {
                return Err(CplError::numeric(format!("non-finite loss {}", out.value)));
            }
            out.grad_feature.iter_mut().for_each(|g| *g *= scale);
            self.extractor.backward(x, &cache, &out.grad_feature, &mut ext_grads);
            for (acc, g) in proxy_grads.iter_mut().zip(&out.grad_proxies) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
            loss += scale * out.value;
            singular += out.singular;
        }
        let proxies = self.proxies.backward(&proxy_grads)?;
        Ok(BatchOutput {
            loss,
            grads: ModelGrads {
                extractor: ext_grads,
                proxies,
            },
            singular,
        })
    }

    /// All trainable tensors: the extractor's `w1, b1, w2, b2`, then the proxy vectors.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let e = &mut self.extractor;
        let mut out: Vec<&mut [f64]> = vec![&mut e.w1, &mut e.b1, &mut e.w2, &mut e.b2];
        out.extend(self.proxies.vectors.iter_mut().map(Vec::as_mut_slice));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let e = &self.extractor;
        let mut out: Vec<&[f64]> = vec![&e.w1, &e.b1, &e.w2, &e.b2];
        out.extend(self.proxies.vectors.iter().map(Vec::as_slice));
        out
    }
}

pub const CHECKPOINT_FORMAT: &str = "cpl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model snapshot (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// 1-based epoch the parameters were taken after; 0 means untrained.
    pub epoch: usize,
    pub model: CplModel,
}

impl Checkpoint {
    pub fn new(model: CplModel, seed: u64, epoch: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed,
            epoch,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CplError::numeric(format!("cannot serialize checkpoint: {e}")))?;
        fs::write(path, text).map_err(|e| CplError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CplError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CplError::data(format!("{}: invalid checkpoint: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(CplError::data(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ckpt.format,
                ckpt.version
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}
