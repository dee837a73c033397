use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smi_meta::episodes::SyntheticDataset;
use smi_meta::kernel::Kernel;
use smi_meta::meta::{self, EpochRecord, TrainOutcome};
use smi_meta::select::{self, SelectionOrigin};
use smi_meta::{seed, Error, MaximizerKind, ParamVector, Result, SetFunctionKind, StrategyKind, TrainConfig};

use crate::config::ExperimentConfig;

pub const THREADS_ENV: &str = "SMI_META_THREADS";

// Seed-path tag for the meta-test episode stream.
const TEST_EPISODES: u64 = 0x7e57;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub strategy: String,
    pub rho: f64,
    pub ood_classes: usize,
    pub outer_selection: bool,
    pub mean_acc: f64,
    pub ci95: f64,
    pub selection_label_match: f64,
    pub selection_in_dist: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub epochs: usize,
    pub wall_time_s: f64,
}

pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn load_dataset(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<SyntheticDataset> {
    match data {
        Some(p) => SyntheticDataset::read_csv(File::open(p)?),
        None => cfg.dataset.generate(),
    }
}

pub fn out_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = cfg.dataset.generate()?;
    ds.write_csv(BufWriter::new(File::create(out)?))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in history {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `checkpoint.txt`, `history.jsonl` and `train_summary.json` into `dir`.
pub fn train(cfg: &ExperimentConfig, dataset: &SyntheticDataset, dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    let outcome = meta::meta_train(&cfg.train, dataset)?;
    let summary = TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_val_accuracy,
        epochs: outcome.history.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    outcome.theta.save(&dir.join("checkpoint.txt"))?;
    write_history(&dir.join("history.jsonl"), &outcome.history)?;
    serde_json::to_writer_pretty(File::create(dir.join("train_summary.json"))?, &summary)?;
    Ok(outcome)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    theta: &ParamVector,
    dataset: &SyntheticDataset,
) -> Result<MetricsRecord> {
    if theta.widths() != train_cfg.widths.as_slice() {
        return Err(Error::Config(format!(
            "checkpoint widths {:?} differ from configured {:?}",
            theta.widths(),
            train_cfg.widths
        )));
    }
    let start = Instant::now();
    let episodes = meta::test_episodes(
        dataset,
        train_cfg.shape,
        cfg.n_test_episodes(),
        seed::derive(train_cfg.seed, &[TEST_EPISODES]),
    )?;
    let summary = meta::meta_test(theta, &episodes, train_cfg)?;
    Ok(MetricsRecord {
        strategy: train_cfg.strategy.to_string(),
        rho: dataset.rho,
        ood_classes: train_cfg.shape.ood,
        outer_selection: train_cfg.outer_selection,
        mean_acc: summary.mean_accuracy,
        ci95: summary.ci95,
        selection_label_match: summary.selection_label_match,
        selection_in_dist: summary.selection_in_dist,
        wall_time_s: start.elapsed().as_secs_f64(),
        seed: train_cfg.seed,
    })
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One ablation cell: the configured run with the strategy, distractor count and
/// outer-selection toggle overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub strategy: StrategyKind,
    pub ood: usize,
    pub outer_selection: bool,
}

pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &ood in &cfg.ablation.ood_classes {
        for &outer_selection in &cfg.ablation.outer_selection {
            for &strategy in &cfg.ablation.strategies {
                cells.push(Cell {
                    strategy,
                    ood,
                    outer_selection,
                });
            }
        }
    }
    cells
}

fn run_cell(cfg: &ExperimentConfig, dataset: &SyntheticDataset, cell: Cell) -> Result<MetricsRecord> {
    let mut train_cfg = cfg.train.clone();
    train_cfg.strategy = cell.strategy;
    train_cfg.shape.ood = cell.ood;
    train_cfg.outer_selection = cell.outer_selection;
    let start = Instant::now();
    let outcome = meta::meta_train(&train_cfg, dataset)?;
    let mut rec = evaluate(cfg, &train_cfg, &outcome.theta, dataset)?;
    rec.wall_time_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Every cell shares the configured seed. Cells run on up to `threads` workers; records come back in cell order.
pub fn ablate(cfg: &ExperimentConfig, dataset: &SyntheticDataset, threads: usize) -> Result<Vec<MetricsRecord>> {
    let cells = ablation_cells(cfg);
    let threads = threads.clamp(1, cells.len().max(1));
    let mut results: Vec<Option<Result<MetricsRecord>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<(usize, Cell)>> = (0..threads)
            .map(|w| cells.iter().copied().enumerate().skip(w).step_by(threads).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(i, cell)| (i, run_cell(cfg, dataset, cell)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("ablation worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every cell ran")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRow {
    pub pool_index: usize,
    pub label: usize,
    pub gain: f64,
    pub step: usize,
}

/// Per-class selection over every column of a kernel CSV.
pub fn select(
    kernel_csv: &Path,
    budget_per_class: usize,
    kind: SetFunctionKind,
    maximizer: MaximizerKind,
    seed: u64,
) -> Result<Vec<SelectedRow>> {
    let kernel = Kernel::read_csv(File::open(kernel_csv)?)?;
    let cols: Vec<usize> = (0..kernel.cols()).collect();
    let subset = select::per_class_select(
        &kernel,
        &cols,
        budget_per_class,
        kind,
        maximizer,
        seed,
        SelectionOrigin::Outer,
    )?;
    Ok(subset
        .entries
        .iter()
        .map(|e| SelectedRow {
            pool_index: e.pool_index,
            label: e.label,
            gain: e.gain,
            step: e.step,
        })
        .collect())
}

pub fn write_selection(path: &Path, rows: &[SelectedRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
