//! Flat JSON run configuration with `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{gen_synthetic_linear, gen_synthetic_ring, load_csv, LabeledDataset, SplitSpec};
use crate::distributions::{Normalization, SmoothingFunction, SmoothingKind};
use crate::error::{CplError, Result};
use crate::geometry::{LayoutKind, NormMode, Similarity};
use crate::losses::{LossConfig, LossMode};
use crate::model::{ProblemSpec, Variant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityName {
    EuclideanT,
    Cosine,
    NegEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingName {
    Poisson,
    Binomial,
    Exponential,
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    SyntheticLinear,
    SyntheticRing,
    Csv,
}

/// Every knob of an experiment. Defaults reproduce the hard-linear setup with
/// the published hyperparameters on a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub num_classes: usize,
    pub similarity: SimilarityName,
    /// Cosine scale `s`.
    pub scale: f64,
    pub layout: LayoutKind,
    pub mode: LossMode,
    pub alpha: f64,
    pub smoothing: SmoothingName,
    pub tau_p: f64,
    pub tau_b: f64,
    pub tau_e: f64,
    pub tri_a: f64,
    pub tri_b: f64,
    /// Overrides the per-function default normalization of smoothed labels.
    pub smoothing_normalization: Option<Normalization>,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Fixes `‖v0‖` of the linear layout to this value.
    pub v0_fixed_norm: Option<f64>,
    pub v0_init_norm: Option<f64>,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr_extractor: f64,
    pub lr_proxies: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,

    pub data: DataSource,
    pub data_path: Option<PathBuf>,
    pub n_per_class: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    pub overlap: f64,
    pub data_seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_seed: u64,

    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            num_classes: 8,
            similarity: SimilarityName::EuclideanT,
            scale: 6.0,
            layout: LayoutKind::HardLinear,
            mode: LossMode::Hard,
            alpha: 6.0,
            smoothing: SmoothingName::Binomial,
            tau_p: 0.11,
            tau_b: 0.13,
            tau_e: 30.0,
            tri_a: 0.9,
            tri_b: 0.1,
            smoothing_normalization: None,
            feature_dim: 512,
            hidden_dim: 64,
            v0_fixed_norm: None,
            v0_init_norm: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_extractor: t.lr_extractor,
            lr_proxies: t.lr_proxies,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: 0,
            data: DataSource::SyntheticLinear,
            data_path: None,
            n_per_class: 100,
            input_dim: 16,
            noise_sigma: 0.1,
            overlap: 0.0,
            data_seed: 0,
            split_train: 0.75,
            split_val: 0.05,
            split_test: 0.20,
            split_seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Parses `key=value`; the value is read as JSON when possible, otherwise as a
/// bare string.
pub fn parse_override(item: &str) -> Result<(String, Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CplError::config(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CplError::config(format!("override {item:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

impl RunConfig {
    /// Builds a config from an optional JSON object plus overrides applied in order.
    pub fn from_value(base: Option<Value>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut map = match base {
            None => Map::new(),
            Some(Value::Object(m)) => m,
            Some(other) => {
                return Err(CplError::config(format!(
                    "configuration must be a JSON object, got {other}"
                )))
            }
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| CplError::config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CplError::io(p, e))?;
                Some(serde_json::from_str(&text).map_err(|e| {
                    CplError::config(format!("{}: not valid JSON: {e}", p.display()))
                })?)
            }
            None => None,
        };
        let overrides = overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_value(base, &overrides)
    }

    /// Returns a copy with `key` set to `value`, re-validated.
    pub fn with(&self, key: &str, value: Value) -> Result<Self> {
        let base = serde_json::to_value(self).expect("config serializes");
        Self::from_value(Some(base), &[(key.to_string(), value)])
    }

    pub fn similarity_kind(&self) -> Similarity {
        match self.similarity {
            SimilarityName::EuclideanT => Similarity::EuclideanT,
            SimilarityName::Cosine => Similarity::Cosine { scale: self.scale },
            SimilarityName::NegEuclidean => Similarity::NegEuclidean,
        }
    }

    pub fn smoothing_kind(&self) -> SmoothingKind {
        let function = match self.smoothing {
            SmoothingName::Poisson => SmoothingFunction::Poisson { tau: self.tau_p },
            SmoothingName::Binomial => SmoothingFunction::Binomial { tau: self.tau_b },
            SmoothingName::Exponential => SmoothingFunction::Exponential { tau: self.tau_e },
            SmoothingName::Triangular => SmoothingFunction::Triangular {
                a: self.tri_a,
                b: self.tri_b,
            },
        };
        let kind = SmoothingKind::new(function);
        match self.smoothing_normalization {
            Some(n) => kind.with_normalization(n),
            None => kind,
        }
    }

    pub fn problem_spec(&self, input_dim: usize) -> ProblemSpec {
        ProblemSpec {
            num_classes: self.num_classes,
            input_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
            similarity: self.similarity_kind(),
            layout: self.layout,
            loss: LossConfig {
                mode: self.mode,
                alpha: self.alpha,
            },
            smoothing: (self.mode == LossMode::Soft).then(|| self.smoothing_kind()),
            norm_mode: match self.v0_fixed_norm {
                Some(c) => NormMode::Fixed(c),
                None => NormMode::Learnable,
            },
            v0_init_norm: self.v0_init_norm,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_extractor: self.lr_extractor,
            lr_proxies: self.lr_proxies,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split_train,
            val: self.split_val,
            test: self.split_test,
            seed: self.split_seed,
        }
    }

    /// Checks every combination that can be checked without touching data.
    pub fn validate(&self) -> Result<Variant> {
        let variant = self.problem_spec(self.input_dim).validate()?;
        if self.mode != LossMode::Soft {
            // smoothing parameters are unused but must still be sane when given
            self.smoothing_kind().validate()?;
        }
        self.train_config().validate()?;
        self.split_spec().validate()?;
        match self.data {
            DataSource::Csv if self.data_path.is_none() => {
                return Err(CplError::config("data = csv requires data_path"))
            }
            DataSource::SyntheticRing if self.input_dim < 2 => {
                return Err(CplError::config("synthetic-ring needs input_dim >= 2"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(CplError::config("overlap must lie in [0, 1)"));
        }
        Ok(variant)
    }

    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let ds = match self.data {
            DataSource::SyntheticLinear => gen_synthetic_linear(
                self.num_classes,
                self.n_per_class,
                self.input_dim,
                self.noise_sigma,
                self.overlap,
                self.data_seed,
            )?,
            DataSource::SyntheticRing => gen_synthetic_ring(
                self.num_classes,
                self.n_per_class,
                self.input_dim,
                self.noise_sigma,
                self.data_seed,
            )?,
            DataSource::Csv => {
                let path = self.data_path.as_deref().expect("validated");
                load_csv(path, Some(self.num_classes))?
            }
        };
        Ok(ds)
    }

    /// Replicate `r` of this config: model, data and split seeds all shifted by `r`.
    pub fn replicate(&self, r: u64) -> RunConfig {
        let mut c = self.clone();
        c.seed = self.seed.wrapping_add(r);
        c.data_seed = self.data_seed.wrapping_add(r);
        c.split_seed = self.split_seed.wrapping_add(r);
        c
    }
}
