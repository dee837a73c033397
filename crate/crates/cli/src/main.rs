//! `smi-meta`: dataset generation, meta-training, evaluation, ablations and
//! standalone SMI selection.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration error, 3 data error,
//! 4 numeric divergence.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use smi_meta::{Error, MaximizerKind, ParamVector, SetFunctionKind};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "smi-meta", version, about = "Semi-supervised few-shot meta-learning with SMI selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Meta-train and write checkpoint.txt, history.jsonl and train_summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Meta-test a checkpoint and write one metrics row.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep distractor counts, outer selection and strategies.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-class SMI selection on a kernel CSV.
    Select {
        #[arg(long)]
        kernel: PathBuf,
        /// Selections per row class.
        #[arg(long)]
        budget: usize,
        /// `flmi` or `gcmi`.
        #[arg(long, default_value = "flmi")]
        function: String,
        /// `naive`, `lazy` or `stochastic:<epsilon>`.
        #[arg(long, default_value = "lazy")]
        maximizer: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> smi_meta::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn parse_function(s: &str) -> smi_meta::Result<SetFunctionKind> {
    match s.to_ascii_lowercase().as_str() {
        "flmi" => Ok(SetFunctionKind::Flmi),
        "gcmi" => Ok(SetFunctionKind::Gcmi),
        other => Err(Error::Config(format!("unknown SMI function {other:?}"))),
    }
}

fn parse_maximizer(s: &str) -> smi_meta::Result<MaximizerKind> {
    let s = s.to_ascii_lowercase();
    let kind = match s.as_str() {
        "naive" => MaximizerKind::Naive,
        "lazy" => MaximizerKind::Lazy,
        other => match other.strip_prefix("stochastic:") {
            Some(eps) => MaximizerKind::Stochastic {
                epsilon: eps
                    .parse()
                    .map_err(|e| Error::Config(format!("bad epsilon {eps:?}: {e}")))?,
            },
            None => return Err(Error::Config(format!("unknown maximizer {other:?}"))),
        },
    };
    kind.validate()?;
    Ok(kind)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let mut cfg = load_config(&config, None)?;
            if let Some(s) = seed {
                cfg.dataset.seed = s;
            }
            run::generate(&cfg, &out).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Train {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let ds = run::load_dataset(&cfg, data.as_deref())?;
            let dir = run::out_dir(&cfg, out.as_deref());
            let outcome = run::train(&cfg, &ds, &dir)?;
            eprintln!(
                "trained {} epochs; best epoch {} (validation accuracy {:?}); outputs in {}",
                outcome.history.len(),
                outcome.best_epoch,
                outcome.best_val_accuracy,
                dir.display()
            );
        }
        Command::Evaluate {
            config,
            checkpoint,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let ds = run::load_dataset(&cfg, data.as_deref())?;
            let theta = ParamVector::load(&checkpoint)?;
            let rec = run::evaluate(&cfg, &cfg.train, &theta, &ds)?;
            eprintln!("{}: accuracy {:.4} +- {:.4}", rec.strategy, rec.mean_acc, rec.ci95);
            run::write_metrics(&out, &[rec])?;
        }
        Command::Ablate {
            config,
            data,
            out,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let ds = run::load_dataset(&cfg, data.as_deref())?;
            let records = run::ablate(&cfg, &ds, run::threads())?;
            run::write_metrics(&out, &records)?;
        }
        Command::Select {
            kernel,
            budget,
            function,
            maximizer,
            out,
            seed,
        } => {
            let kind = parse_function(&function)?;
            let maximizer = parse_maximizer(&maximizer)?;
            let rows = run::select(&kernel, budget, kind, maximizer, seed)
                .with_context(|| format!("selecting from {}", kernel.display()))?;
            run::write_selection(&out, &rows)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(
            Error::Input(_)
            | Error::Parse { .. }
            | Error::Sampling(_)
            | Error::Size(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_),
        ) => 3,
        Some(Error::Numeric(_)) => 4,
        Some(Error::Logic(_)) | None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
