//! End-to-end runs: data → split → train → test, plus hyperparameter sweeps
//! and ablation comparisons built on top of them.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, SimilarityName};
use crate::data::split;
use crate::error::{CplError, Result};
use crate::geometry::LayoutKind;
use crate::losses::LossMode;
use crate::model::{init_model, Checkpoint};
use crate::training::{evaluate, train, write_log_csv, Metrics, TrainReport};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: TrainReport,
    pub test: Metrics,
    pub split_sizes: (usize, usize, usize),
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    variant: String,
    best_epoch: usize,
    val_accuracy: f64,
    val_mae: f64,
    test_accuracy: f64,
    test_mae: f64,
    train_size: usize,
    val_size: usize,
    test_size: usize,
    singular_gradients: usize,
    config: &'a RunConfig,
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let dataset = config.load_dataset()?;
    let (train_set, val_set, test_set) = split(&dataset, &config.split_spec())?;
    let spec = config.problem_spec(dataset.input_dim);
    let model = init_model(&spec, config.seed)?;
    let report = train(model, &train_set, &val_set, &config.train_config())?;
    let test = evaluate(&report.best, &test_set)?;
    Ok(RunOutcome {
        report,
        test,
        split_sizes: (train_set.len(), val_set.len(), test_set.len()),
    })
}

/// Writes `checkpoint.json`, `metrics_log.csv` and `summary.json` into `dir`.
pub fn write_run_outputs(config: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CplError::io(dir, e))?;
    let report = &outcome.report;
    Checkpoint::new(report.best.clone(), config.seed, report.best_epoch)
        .save(&dir.join("checkpoint.json"))?;
    let log_path = dir.join("metrics_log.csv");
    let file = fs::File::create(&log_path).map_err(|e| CplError::io(&log_path, e))?;
    write_log_csv(&report.log, file)?;
    let summary = Summary {
        variant: config.validate()?.to_string(),
        best_epoch: report.best_epoch,
        val_accuracy: report.best_val.accuracy,
        val_mae: report.best_val.mae,
        test_accuracy: outcome.test.accuracy,
        test_mae: outcome.test.mae,
        train_size: outcome.split_sizes.0,
        val_size: outcome.split_sizes.1,
        test_size: outcome.split_sizes.2,
        singular_gradients: report.singular_gradients,
        config,
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text).map_err(|e| CplError::io(&path, e))
}

/// Hyperparameters that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Scale,
    TauP,
    TauB,
    Alpha,
    Dim,
}

impl std::str::FromStr for SweepParam {
    type Err = CplError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" | "scale" => Ok(SweepParam::Scale),
            "tau_p" => Ok(SweepParam::TauP),
            "tau_b" => Ok(SweepParam::TauB),
            "alpha" => Ok(SweepParam::Alpha),
            "dim" | "feature_dim" => Ok(SweepParam::Dim),
            other => Err(CplError::config(format!(
                "unknown sweep parameter {other:?}; expected one of s, tau_p, tau_b, alpha, dim"
            ))),
        }
    }
}

impl SweepParam {
    pub fn config_key(&self) -> &'static str {
        match self {
            SweepParam::Scale => "scale",
            SweepParam::TauP => "tau_p",
            SweepParam::TauB => "tau_b",
            SweepParam::Alpha => "alpha",
            SweepParam::Dim => "feature_dim",
        }
    }

    /// Built-in grids: s ∈ {2..10 step 2}, τ ∈ {0.07..0.17 step 0.02},
    /// α ∈ {0..12 step 2}, d ∈ {1, 2, 4, …, 2048}.
    pub fn default_grid(&self) -> Vec<f64> {
        match self {
            SweepParam::Scale => (1..=5).map(|i| 2.0 * i as f64).collect(),
            SweepParam::TauP | SweepParam::TauB => {
                [0.07, 0.09, 0.11, 0.13, 0.15, 0.17].to_vec()
            }
            SweepParam::Alpha => (0..=6).map(|i| 2.0 * i as f64).collect(),
            SweepParam::Dim => (0..=11).map(|i| (1u64 << i) as f64).collect(),
        }
    }

    fn value_json(&self, v: f64) -> Result<Value> {
        match self {
            SweepParam::Dim => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(CplError::config(format!("dimension {v} is not a positive integer")));
                }
                Ok(json!(v as u64))
            }
            _ => Ok(json!(v)),
        }
    }

    pub fn apply(&self, config: &RunConfig, v: f64) -> Result<RunConfig> {
        config.with(self.config_key(), self.value_json(v)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy: f64,
    pub mae: f64,
}

/// Test metrics of `config` averaged over replicates `0..replicates`.
fn replicated(configs: &[RunConfig], replicates: u64) -> Result<Vec<Metrics>> {
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| (0..replicates).map(move |r| (i, r)))
        .collect();
    let results: Vec<Result<Metrics>> = jobs
        .par_iter()
        .map(|&(i, r)| run(&configs[i].replicate(r)).map(|o| o.test))
        .collect();
    let mut out = Vec::with_capacity(configs.len());
    let mut it = results.into_iter();
    for _ in configs {
        let (mut acc, mut mae) = (0.0, 0.0);
        for _ in 0..replicates {
            let m = it.next().expect("one result per job")?;
            acc += m.accuracy;
            mae += m.mae;
        }
        out.push(Metrics {
            accuracy: acc / replicates as f64,
            mae: mae / replicates as f64,
        });
    }
    Ok(out)
}

pub fn sweep(
    config: &RunConfig,
    param: SweepParam,
    values: &[f64],
    replicates: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || replicates == 0 {
        return Err(CplError::config("a sweep needs at least one value and one replicate"));
    }
    let configs = values
        .iter()
        .map(|v| param.apply(config, *v))
        .collect::<Result<Vec<_>>>()?;
    let metrics = replicated(&configs, replicates)?;
    Ok(values
        .iter()
        .zip(metrics)
        .map(|(v, m)| SweepRow {
            value: *v,
            accuracy: m.accuracy,
            mae: m.mae,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ablation {
    /// Negative Euclidean distance in place of the Student-t similarity.
    NegEuclidean,
    /// Linear layout with `‖v0‖` pinned to each value.
    FixedV0Norm(Vec<f64>),
    /// Free proxies trained with cross-entropy on one-hot labels.
    UplBaseline,
}

impl Ablation {
    pub fn parse(name: &str, values: Option<&[f64]>) -> Result<Self> {
        match name {
            "neg-euclidean" => Ok(Ablation::NegEuclidean),
            "fixed-v0-norm" => Ok(Ablation::FixedV0Norm(
                values.map_or_else(|| vec![1.0, 3.0, 5.0, 7.0], <[f64]>::to_vec),
            )),
            "upl-baseline" => Ok(Ablation::UplBaseline),
            other => Err(CplError::config(format!(
                "unknown ablation {other:?}; expected neg-euclidean, fixed-v0-norm or upl-baseline"
            ))),
        }
    }

    /// `(row name, config)` pairs; the reference run comes first.
    pub fn variants(&self, reference: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
        let mut out = vec![("reference".to_string(), reference.clone())];
        match self {
            Ablation::NegEuclidean => {
                if reference.similarity != SimilarityName::EuclideanT {
                    return Err(CplError::config(
                        "the neg-euclidean ablation compares against a euclidean-t reference",
                    ));
                }
                out.push(("neg-euclidean".into(), reference.with("similarity", json!("neg-euclidean"))?));
            }
            Ablation::FixedV0Norm(values) => {
                if reference.layout != LayoutKind::HardLinear || reference.v0_fixed_norm.is_some() {
                    return Err(CplError::config(
                        "the fixed-v0-norm ablation needs a learnable hard-linear reference",
                    ));
                }
                if values.is_empty() {
                    return Err(CplError::config("fixed-v0-norm needs at least one value"));
                }
                for c in values {
                    out.push((format!("fixed-v0-norm={c}"), reference.with("v0_fixed_norm", json!(c))?));
                }
            }
            Ablation::UplBaseline => {
                if reference.mode == LossMode::Upl {
                    return Err(CplError::config("the reference run is already UPL"));
                }
                let mut upl = reference.clone();
                upl.layout = LayoutKind::SoftFree;
                upl.mode = LossMode::Upl;
                upl.v0_fixed_norm = None;
                upl.v0_init_norm = None;
                upl.validate()?;
                out.push(("upl".into(), upl));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub mae: f64,
}

pub fn ablate(config: &RunConfig, ablation: &Ablation, replicates: u64) -> Result<Vec<AblationRow>> {
    if replicates == 0 {
        return Err(CplError::config("replicates must be >= 1"));
    }
    let variants = ablation.variants(config)?;
    let configs: Vec<RunConfig> = variants.iter().map(|(_, c)| c.clone()).collect();
    let metrics = replicated(&configs, replicates)?;
    Ok(variants
        .into_iter()
        .zip(metrics)
        .map(|((variant, _), m)| AblationRow {
            variant,
            accuracy: m.accuracy,
            mae: m.mae,
        })
        .collect())
}

pub fn write_rows_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CplError::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CplError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)
            .map_err(|e| CplError::data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CplError::io(path, e))
}
