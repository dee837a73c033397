//! First-order MAML with SMI semi-supervision in both loops.
//!
//! Inner loop, per task: starting from `phi = theta`, each step `t` selects a
//! fresh batch of pseudo-labeled points with the current `phi`, then takes one
//! SGD step on `L_l(S) + tau_in(t) * L_u(A^s)` where `A^s` holds the points
//! accumulated in earlier steps; the fresh batch joins `A^s` after the update.
//! Outer loop: a second selection `A^q` is drawn from what the inner loop left,
//! using the adapted `phi`, and `theta` moves by `beta` times the mean gradient of
//! `L_l(Q) + tau_out(j) * L_u(A^q)` evaluated at each task's `phi` (first order:
//! no differentiation through the inner loop).

use serde::{Deserialize, Serialize};

use crate::episodes::{sample_episode, Episode, EpisodeShape, Split, SyntheticDataset};
use crate::error::{Error, Result};
use crate::maximize::MaximizerKind;
use crate::net::{self, LossBreakdown, ParamVector};
use crate::seed;
use crate::select::{self, selection_accuracy, Budget, Phase, SelectedSubset, SelectionOrigin};
use crate::strategy::{self, AcquireRequest, StrategyKind};

/// Inner-loop weight on the unlabeled loss at step `t` of `t_in` (1-based):
/// 0 for `t < 2`, otherwise `exp(-5 (1 - t / t_in)^2)`.
pub fn tau_in(t: usize, t_in: usize) -> Result<f64> {
    if t == 0 || t > t_in {
        return Err(Error::Logic(format!("inner step {t} outside 1..={t_in}")));
    }
    if t < 2 {
        return Ok(0.0);
    }
    let r = 1.0 - t as f64 / t_in as f64;
    Ok((-5.0 * r * r).exp())
}

/// Outer-loop weight at epoch `j` (1-based): `exp(-5 (1 - j / t_warm)^2)` up to the
/// warm-up epoch, 1 afterwards. With no warm-up it is always 1.
pub fn tau_out(j: usize, t_warm: usize) -> Result<f64> {
    if j == 0 {
        return Err(Error::Logic("epochs are numbered from 1".into()));
    }
    if t_warm == 0 || j > t_warm {
        return Ok(1.0);
    }
    let r = 1.0 - j as f64 / t_warm as f64;
    Ok((-5.0 * r * r).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedules {
    /// Inner steps during meta-training.
    pub t_in: usize,
    /// Inner steps when adapting to meta-test (and validation) tasks.
    pub t_in_test: usize,
    /// Meta-training epochs.
    pub t_out: usize,
    /// Warm-up epoch for the outer unlabeled weight.
    pub t_warm: usize,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            t_in: 5,
            t_in_test: 10,
            t_out: 60,
            t_warm: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub batch_tasks: usize,
    pub schedules: Schedules,
    pub budget: Budget,
    pub strategy: StrategyKind,
    pub maximizer: MaximizerKind,
    pub seed: u64,
    pub iterations_per_epoch: usize,
    /// Layer widths `[input, hidden.., way]`.
    pub widths: Vec<usize>,
    pub shape: EpisodeShape,
    /// Whether the outer loss includes a pseudo-labeled selection.
    pub outer_selection: bool,
    /// Validation episodes scored after every epoch; 0 disables checkpoint selection.
    pub val_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.05,
            batch_tasks: 1,
            schedules: Schedules::default(),
            budget: Budget::default(),
            strategy: StrategyKind::FLMI,
            maximizer: MaximizerKind::Lazy,
            seed: 0,
            iterations_per_epoch: 100,
            widths: vec![32, 64, 64, 5],
            shape: EpisodeShape::default(),
            outer_selection: true,
            val_episodes: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return cfg(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return cfg(format!("beta must be > 0, got {}", self.beta));
        }
        if self.batch_tasks == 0 {
            return cfg("batch_tasks must be >= 1".into());
        }
        let s = &self.schedules;
        if s.t_in == 0 || s.t_in_test == 0 {
            return cfg("inner step counts must be >= 1".into());
        }
        if s.t_warm > s.t_out {
            return cfg(format!("t_warm {} exceeds t_out {}", s.t_warm, s.t_out));
        }
        self.budget.validate()?;
        self.shape.validate()?;
        self.strategy.validate()?;
        self.maximizer.validate()?;
        if self.budget.way != self.shape.way {
            return cfg(format!(
                "budget is split over {} classes but episodes are {}-way",
                self.budget.way, self.shape.way
            ));
        }
        if self.widths.last() != Some(&self.shape.way) {
            return cfg(format!(
                "classifier widths {:?} must end in the episode way {}",
                self.widths, self.shape.way
            ));
        }
        if self.widths.contains(&0) || self.widths.len() < 2 {
            return cfg(format!("degenerate classifier widths {:?}", self.widths));
        }
        Ok(())
    }

    fn inner_steps(&self, phase: Phase) -> usize {
        match phase {
            Phase::MetaTrain => self.schedules.t_in,
            Phase::MetaTest => self.schedules.t_in_test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerStepLog {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Size of the fresh selection made at this step.
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub phi: ParamVector,
    /// Every point selected across the inner loop.
    pub selected: SelectedSubset,
    pub log: Vec<InnerStepLog>,
}

/// Adapt `theta` to one episode.
pub fn adapt(
    theta: &ParamVector,
    episode: &Episode,
    cfg: &TrainConfig,
    phase: Phase,
    task_seed: u64,
) -> Result<Adaptation> {
    let steps = cfg.inner_steps(phase);
    let support = episode.support();
    let mut phi = theta.clone();
    let mut accumulated = SelectedSubset::empty(SelectionOrigin::Inner);
    let mut log = Vec::with_capacity(steps);
    for t in 1..=steps {
        let tau = tau_in(t, steps)?;
        let fresh = if cfg.strategy.selects() {
            let pool = select::remaining_pool(episode, &accumulated);
            strategy::acquire(
                cfg.strategy,
                &AcquireRequest {
                    model: &phi,
                    episode,
                    pool: &pool,
                    total_budget: cfg.budget.b_in,
                    phase,
                    maximizer: cfg.maximizer,
                    origin: SelectionOrigin::Inner,
                    step: t,
                    seed: seed::derive(task_seed, &[t as u64]),
                },
            )?
        } else {
            SelectedSubset::empty(SelectionOrigin::Inner)
        };
        let pseudo = accumulated.pseudo_examples(episode);
        let (loss, grad) = net::loss_and_grad(&phi, &support, &pseudo, tau)?;
        phi = net::sgd_step(&phi, &grad, cfg.alpha)?;
        log.push(InnerStepLog {
            step: t,
            loss,
            selected: fresh.len(),
        });
        accumulated.extend(fresh);
    }
    Ok(Adaptation {
        phi,
        selected: accumulated,
        log,
    })
}

/// Per-task detail of one outer update.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub adaptation: Adaptation,
    pub outer_selected: SelectedSubset,
    pub outer_loss: LossBreakdown,
    pub outer_grad: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaStep {
    pub theta: ParamVector,
    pub tasks: Vec<TaskOutcome>,
    pub tau_out: f64,
}

/// One first-order meta-update over a batch of episodes at epoch `epoch` (1-based).
pub fn meta_step(
    theta: &ParamVector,
    episodes: &[Episode],
    epoch: usize,
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<MetaStep> {
    if episodes.is_empty() {
        return Err(Error::Config("meta step needs at least one episode".into()));
    }
    let tau = tau_out(epoch, cfg.schedules.t_warm)?;
    let mut tasks = Vec::with_capacity(episodes.len());
    for (i, episode) in episodes.iter().enumerate() {
        let adaptation = adapt(
            theta,
            episode,
            cfg,
            Phase::MetaTrain,
            seed::derive(step_seed, &[i as u64, 0]),
        )?;
        let outer_selected = if cfg.outer_selection && cfg.strategy.selects() {
            let pool = select::remaining_pool(episode, &adaptation.selected);
            strategy::acquire(
                cfg.strategy,
                &AcquireRequest {
                    model: &adaptation.phi,
                    episode,
                    pool: &pool,
                    total_budget: cfg.budget.b_out,
                    phase: Phase::MetaTrain,
                    maximizer: cfg.maximizer,
                    origin: SelectionOrigin::Outer,
                    step: 0,
                    seed: seed::derive(step_seed, &[i as u64, 1]),
                },
            )?
        } else {
            SelectedSubset::empty(SelectionOrigin::Outer)
        };
        let (outer_loss, outer_grad) = net::loss_and_grad(
            &adaptation.phi,
            &episode.query(),
            &outer_selected.pseudo_examples(episode),
            tau,
        )?;
        tasks.push(TaskOutcome {
            adaptation,
            outer_selected,
            outer_loss,
            outer_grad,
        });
    }
    let mut mean = ParamVector::zeros(theta.widths())?;
    for t in &tasks {
        mean.add_scaled(&t.outer_grad, 1.0)?;
    }
    mean.scale(1.0 / tasks.len() as f64);
    let mut next = theta.clone();
    next.add_scaled(&mean, -cfg.beta)?;
    if next.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("meta-parameters diverged".into()));
    }
    Ok(MetaStep {
        theta: next,
        tasks,
        tau_out: tau,
    })
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub outer_labeled_loss: f64,
    pub outer_unlabeled_loss: f64,
    pub outer_total_loss: f64,
    pub tau_out: f64,
    /// Mean loss of the final inner step.
    pub inner_total_loss: f64,
    pub inner_label_match: f64,
    pub inner_in_dist: f64,
    pub outer_label_match: f64,
    pub outer_in_dist: f64,
    /// `None` when validation is disabled.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned parameters; 0 means the initialisation.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

// Seed-path tags keep the random streams of different purposes apart.
const INIT: u64 = 1;
const TRAIN: u64 = 2;
const VAL: u64 = 3;
const VAL_ADAPT: u64 = 4;
const TEST_ADAPT: u64 = 5;

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// The parameters `meta_train` starts from.
pub fn initial_params(cfg: &TrainConfig) -> Result<ParamVector> {
    net::init_params(seed::derive(cfg.seed, &[INIT]), &cfg.widths)
}

/// Meta-train on the train split, returning the best-validation parameters.
pub fn meta_train(cfg: &TrainConfig, dataset: &SyntheticDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.dim != cfg.widths[0] {
        return Err(Error::Config(format!(
            "dataset dimension {} does not match classifier input {}",
            dataset.dim, cfg.widths[0]
        )));
    }
    let mut theta = initial_params(cfg)?;
    let val_eps = (0..cfg.val_episodes)
        .map(|k| sample_episode(dataset, Split::Val, cfg.shape, seed::derive(cfg.seed, &[VAL, k as u64])))
        .collect::<Result<Vec<_>>>()?;
    let validate = |theta: &ParamVector| -> Result<Option<f64>> {
        if val_eps.is_empty() {
            return Ok(None);
        }
        let s = evaluate(theta, &val_eps, cfg, seed::derive(cfg.seed, &[VAL_ADAPT]))?;
        Ok(Some(s.mean_accuracy))
    };

    let mut best = (theta.clone(), 0usize, validate(&theta)?);
    let mut history = Vec::with_capacity(cfg.schedules.t_out);
    for epoch in 1..=cfg.schedules.t_out {
        let (mut ol, mut ou, mut ot, mut il) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        let (mut ilm, mut iid, mut olm, mut oid) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        let mut tau = 1.0;
        for it in 0..cfg.iterations_per_epoch {
            let episodes = (0..cfg.batch_tasks)
                .map(|i| {
                    sample_episode(
                        dataset,
                        Split::Train,
                        cfg.shape,
                        seed::derive(cfg.seed, &[TRAIN, epoch as u64, it as u64, i as u64]),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let step = meta_step(
                &theta,
                &episodes,
                epoch,
                cfg,
                seed::derive(cfg.seed, &[TRAIN, epoch as u64, it as u64, u64::MAX]),
            )?;
            tau = step.tau_out;
            for (task, ep) in step.tasks.iter().zip(&episodes) {
                ol.push(task.outer_loss.labeled);
                ou.push(task.outer_loss.unlabeled);
                ot.push(task.outer_loss.total);
                if let Some(last) = task.adaptation.log.last() {
                    il.push(last.loss.total);
                }
                let inner = selection_accuracy(&task.adaptation.selected, ep);
                if !inner.empty {
                    ilm.push(inner.label_match);
                    iid.push(inner.in_dist);
                }
                let outer = selection_accuracy(&task.outer_selected, ep);
                if !outer.empty {
                    olm.push(outer.label_match);
                    oid.push(outer.in_dist);
                }
            }
            theta = step.theta;
        }
        let val_accuracy = validate(&theta)?;
        if let (Some(v), Some(b)) = (val_accuracy, best.2) {
            if v > b {
                best = (theta.clone(), epoch, Some(v));
            }
        }
        history.push(EpochRecord {
            epoch,
            outer_labeled_loss: ol.get(),
            outer_unlabeled_loss: ou.get(),
            outer_total_loss: ot.get(),
            tau_out: tau,
            inner_total_loss: il.get(),
            inner_label_match: ilm.get(),
            inner_in_dist: iid.get(),
            outer_label_match: olm.get(),
            outer_in_dist: oid.get(),
            val_accuracy,
        });
    }
    if best.2.is_none() {
        let last = history.len();
        return Ok(TrainOutcome {
            theta,
            history,
            best_epoch: last,
            best_val_accuracy: None,
        });
    }
    Ok(TrainOutcome {
        theta: best.0,
        history,
        best_epoch: best.1,
        best_val_accuracy: best.2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub mean_accuracy: f64,
    /// `1.96 * std / sqrt(n)` with the sample standard deviation; 0 for one episode.
    pub ci95: f64,
    pub accuracies: Vec<f64>,
    pub selection_label_match: f64,
    pub selection_in_dist: f64,
}

/// Mean and 95% half-width of a sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

fn evaluate(theta: &ParamVector, episodes: &[Episode], cfg: &TrainConfig, base_seed: u64) -> Result<TestSummary> {
    let mut accuracies = Vec::with_capacity(episodes.len());
    let (mut lm, mut id) = (Mean::default(), Mean::default());
    for (k, ep) in episodes.iter().enumerate() {
        let ad = adapt(theta, ep, cfg, Phase::MetaTest, seed::derive(base_seed, &[k as u64]))?;
        accuracies.push(net::accuracy(&ad.phi, &ep.query())?);
        let sel = selection_accuracy(&ad.selected, ep);
        if !sel.empty {
            lm.push(sel.label_match);
            id.push(sel.in_dist);
        }
    }
    let (mean_accuracy, ci95) = mean_ci95(&accuracies);
    Ok(TestSummary {
        mean_accuracy,
        ci95,
        accuracies,
        selection_label_match: lm.get(),
        selection_in_dist: id.get(),
    })
}

/// Adapt to each held-out episode using support and unlabeled points only, then
/// score argmax accuracy on its query set.
pub fn meta_test(theta: &ParamVector, episodes: &[Episode], cfg: &TrainConfig) -> Result<TestSummary> {
    evaluate(theta, episodes, cfg, seed::derive(cfg.seed, &[TEST_ADAPT]))
}

/// `n` test-split episodes with seeds derived from `seed`.
pub fn test_episodes(
    dataset: &SyntheticDataset,
    shape: EpisodeShape,
    n: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    (0..n)
        .map(|k| sample_episode(dataset, Split::Test, shape, seed::derive(seed, &[k as u64])))
        .collect()
}
