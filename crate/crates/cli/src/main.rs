use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpl::config::RunConfig;
use cpl::data::{save_csv, split, LabeledDataset};
use cpl::experiment::{ablate, run, sweep, write_rows_csv, write_run_outputs, Ablation, SweepParam};
use cpl::model::Checkpoint;
use cpl::training::evaluate;
use cpl::{viz, CplError};

/// Constrained proxies learning for ordinal classification.
#[derive(Debug, Parser)]
#[command(name = "cpl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON run configuration; built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set layout=soft-free`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.json, metrics_log.csv and summary.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on one split of the configured dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to <output_dir>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Defaults to <output_dir>/eval_metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test once per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of s, tau_p, tau_b, alpha, dim.
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the built-in grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Runs per value (seeds shifted by 0..n), averaged.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        /// Defaults to <output_dir>/sweep_<param>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the configured run against an ablated variant.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// One of neg-euclidean, fixed-v0-norm, upl-baseline.
        #[arg(long)]
        ablation: String,
        /// Norm values for fixed-v0-norm (default 1,3,5,7).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        /// Defaults to <output_dir>/ablation_<name>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export 2-D proxies and features as CSV and SVG (feature_dim must be 2).
    Viz {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Defaults to <output_dir>/viz.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the configured dataset to CSV.
    ExportData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &CplError) -> u8 {
    match err {
        CplError::Config(_) | CplError::DegenerateVector(_) | CplError::DegeneratePlane(_) => 2,
        CplError::Data(_) => 3,
        CplError::Numeric(_) => 4,
        CplError::Io { .. } => 5,
    }
}

fn load_config(args: &ConfigArgs) -> cpl::Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.overrides)
}

fn select_split(config: &RunConfig, which: SplitName) -> cpl::Result<LabeledDataset> {
    let dataset = config.load_dataset()?;
    if which == SplitName::All {
        return Ok(dataset);
    }
    let (train, val, test) = split(&dataset, &config.split_spec())?;
    Ok(match which {
        SplitName::Train => train,
        SplitName::Val => val,
        _ => test,
    })
}

fn checkpoint_path(config: &RunConfig, given: Option<PathBuf>) -> PathBuf {
    given.unwrap_or_else(|| config.output_dir.join("checkpoint.json"))
}

fn check_compatible(ckpt: &Checkpoint, dataset: &LabeledDataset) -> cpl::Result<()> {
    let spec = &ckpt.model.spec;
    if dataset.input_dim != spec.input_dim {
        return Err(CplError::config(format!(
            "checkpoint expects {} input features, dataset has {}",
            spec.input_dim, dataset.input_dim
        )));
    }
    if dataset.num_classes > spec.num_classes {
        return Err(CplError::config(format!(
            "checkpoint has {} classes, dataset has {}",
            spec.num_classes, dataset.num_classes
        )));
    }
    Ok(())
}

fn execute(cli: Cli) -> cpl::Result<()> {
    match cli.command {
        Command::Train { cfg } => {
            let config = load_config(&cfg)?;
            let outcome = run(&config)?;
            write_run_outputs(&config, &outcome, &config.output_dir)?;
            println!(
                "best epoch {}: val accuracy {:.4}, val MAE {:.4}; test accuracy {:.4}, test MAE {:.4}",
                outcome.report.best_epoch,
                outcome.report.best_val.accuracy,
                outcome.report.best_val.mae,
                outcome.test.accuracy,
                outcome.test.mae
            );
            println!("outputs written to {}", config.output_dir.display());
        }
        Command::Eval {
            cfg,
            checkpoint,
            split,
            out,
        } => {
            let config = load_config(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint_path(&config, checkpoint))?;
            let dataset = select_split(&config, split)?;
            check_compatible(&ckpt, &dataset)?;
            let metrics = evaluate(&ckpt.model, &dataset)?;
            println!("accuracy {:.6}, MAE {:.6}", metrics.accuracy, metrics.mae);
            let out = out.unwrap_or_else(|| config.output_dir.join("eval_metrics.csv"));
            write_rows_csv(&[metrics], &out)?;
        }
        Command::Sweep {
            cfg,
            param,
            values,
            replicates,
            out,
        } => {
            let config = load_config(&cfg)?;
            let p: SweepParam = param.parse()?;
            let values = values.unwrap_or_else(|| p.default_grid());
            let rows = sweep(&config, p, &values, replicates)?;
            for r in &rows {
                println!("{} = {}: accuracy {:.4}, MAE {:.4}", param, r.value, r.accuracy, r.mae);
            }
            let out = out.unwrap_or_else(|| config.output_dir.join(format!("sweep_{param}.csv")));
            write_rows_csv(&rows, &out)?;
        }
        Command::Ablate {
            cfg,
            ablation,
            values,
            replicates,
            out,
        } => {
            let config = load_config(&cfg)?;
            let ab = Ablation::parse(&ablation, values.as_deref())?;
            let rows = ablate(&config, &ab, replicates)?;
            for r in &rows {
                println!("{}: accuracy {:.4}, MAE {:.4}", r.variant, r.accuracy, r.mae);
            }
            let out =
                out.unwrap_or_else(|| config.output_dir.join(format!("ablation_{ablation}.csv")));
            write_rows_csv(&rows, &out)?;
        }
        Command::Viz {
            cfg,
            checkpoint,
            split,
            out_dir,
        } => {
            let config = load_config(&cfg)?;
            let ckpt = Checkpoint::load(&checkpoint_path(&config, checkpoint))?;
            let dataset = select_split(&config, split)?;
            check_compatible(&ckpt, &dataset)?;
            let layout = viz::collect(&ckpt.model, &dataset)?;
            let dir = out_dir.unwrap_or_else(|| config.output_dir.join("viz"));
            viz::export(&layout, &dir)?;
            println!("wrote {} features and {} proxies to {}", layout.features.len(), layout.proxies.len(), dir.display());
        }
        Command::ExportData { cfg, out } => {
            let config = load_config(&cfg)?;
            let dataset = config.load_dataset()?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CplError::io(parent, e))?;
            }
            save_csv(&dataset, Path::new(&out))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
