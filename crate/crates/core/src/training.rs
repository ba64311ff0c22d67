//! AdamW, the epoch loop with validation-based model selection, and metrics.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::distributions::CategoricalDistribution;
use crate::error::{CplError, Result};
use crate::model::{CplModel, EXTRACTOR_TENSORS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_extractor: f64,
    pub lr_proxies: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 48,
            batch_size: 32,
            lr_extractor: 1e-3,
            lr_proxies: 1e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CplError::config("epochs and batch_size must be >= 1"));
        }
        if !(self.lr_extractor > 0.0) || !(self.lr_proxies > 0.0) {
            return Err(CplError::config("learning rates must be > 0"));
        }
        if !(self.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(CplError::config("invalid AdamW constants"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Moment buffers for AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, shapes: &[usize]) -> Self {
        AdamW {
            config,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every tensor; `lrs[i]` is the learning rate of tensor `i`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lrs: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || lrs.len() != params.len() {
            return Err(CplError::config("optimizer tensor count mismatch"));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != p.len() {
                return Err(CplError::config(format!("optimizer shape mismatch in tensor {i}")));
            }
            if let Some(j) = g.iter().position(|x| !x.is_finite()) {
                return Err(CplError::numeric(format!(
                    "non-finite gradient {} at tensor {i}, index {j}",
                    g[j]
                )));
            }
        }
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = lrs[i];
            for (j, theta) in p.iter_mut().enumerate() {
                let gj = g[j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = beta1 * *m + (1.0 - beta1) * gj;
                *v = beta2 * *v + (1.0 - beta2) * gj * gj;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps) + lr * weight_decay * *theta;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Self> {
        if predicted.is_empty() || predicted.len() != labels.len() {
            return Err(CplError::data("metrics need equally many (>= 1) predictions and labels"));
        }
        let n = predicted.len() as f64;
        let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        let abs: usize = predicted.iter().zip(labels).map(|(p, l)| p.abs_diff(*l)).sum();
        Ok(Metrics {
            accuracy: hits as f64 / n,
            mae: abs as f64 / n,
        })
    }
}

pub fn evaluate(model: &CplModel, dataset: &LabeledDataset) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(CplError::data("cannot evaluate on an empty dataset"));
    }
    if dataset.input_dim != model.spec.input_dim {
        return Err(CplError::config(format!(
            "dataset has {} features, model expects {}",
            dataset.input_dim, model.spec.input_dim
        )));
    }
    let predicted = model.predict_many(dataset.samples.iter().map(|s| s.x.as_slice()))?;
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    Metrics::from_predictions(&predicted, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_mae: f64,
    /// `‖v0‖` after the epoch.
    #[serde(skip)]
    pub v0_norm: f64,
    /// Smallest total-variation distance between any `Q(k)` and uniform.
    #[serde(skip)]
    pub min_target_tv: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best: CplModel,
    /// 1-based epoch of the selected parameters.
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub log: Vec<EpochRecord>,
    pub singular_gradients: usize,
}

/// Writes the per-epoch log as CSV (`epoch,train_loss,val_accuracy,val_mae`).
pub fn write_log_csv<W: Write>(log: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for rec in log {
        w.serialize(rec)
            .map_err(|e| CplError::data(format!("cannot write metric log: {e}")))?;
    }
    w.flush().map_err(|e| CplError::data(format!("cannot write metric log: {e}")))?;
    Ok(())
}

fn target_tv(targets: &[CategoricalDistribution]) -> f64 {
    targets
        .iter()
        .map(|q| q.total_variation(&CategoricalDistribution::uniform(q.len())))
        .fold(f64::INFINITY, f64::min)
}

/// Runs the full training loop and returns the parameters with the lowest
/// validation MAE (earliest epoch on ties).
pub fn train(
    mut model: CplModel,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    model.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CplError::config("training and validation splits must be non-empty"));
    }
    for ds in [train_set, val_set] {
        if ds.input_dim != model.spec.input_dim {
            return Err(CplError::config(format!(
                "dataset has {} features, model expects {}",
                ds.input_dim, model.spec.input_dim
            )));
        }
        if ds.samples.iter().any(|s| s.label >= model.num_classes()) {
            return Err(CplError::config("dataset label exceeds the model's class count"));
        }
    }

    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let lrs: Vec<f64> = (0..shapes.len())
        .map(|i| {
            if i < EXTRACTOR_TENSORS {
                config.lr_extractor
            } else {
                config.lr_proxies
            }
        })
        .collect();
    let mut opt = AdamW::new(config.adamw(), &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(CplModel, usize, Metrics)> = None;
    let mut singular = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (train_set.samples[i].x.as_slice(), train_set.samples[i].label))
                .collect();
            let out = model.loss_and_grad(&batch)?;
            singular += out.singular;
            loss_sum += out.loss * batch.len() as f64;
            let grads = out.grads.tensors();
            opt.step(&mut model.tensors_mut(), &grads, &lrs)?;
            model.proxies.project()?;
        }
        let val = evaluate(&model, val_set)?;
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_accuracy: val.accuracy,
            val_mae: val.mae,
            v0_norm: model.proxies.v0_norm(),
            min_target_tv: match model.spec.loss.mode {
                crate::losses::LossMode::Upl => f64::NAN,
                _ => target_tv(&model.proxy_targets()?),
            },
        });
        if best.as_ref().is_none_or(|(_, _, m)| val.mae < m.mae) {
            best = Some((model.clone(), epoch, val));
        }
    }
    let (best, best_epoch, best_val) = best.expect("at least one epoch");
    Ok(TrainReport {
        best,
        best_epoch,
        best_val,
        log,
        singular_gradients: singular,
    })
}
