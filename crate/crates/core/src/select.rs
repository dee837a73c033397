//! Per-class SMI selection with hypothesized labels.
//!
//! For every class `c` the query rows of class `c` instantiate one SMI function,
//! which is maximized over the unlabeled pool with budget `B / C`; the winners
//! receive hypothesized label `c`. Classes are processed in ascending order and
//! a point won by one class is no longer available to later classes, so every
//! class gets exactly its share whenever the pool is large enough.

use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::kernel::{self, Embedding, Kernel};
use crate::maximize::{self, MaximizerKind};
use crate::net::{Example, ParamVector};
use crate::seed;
use crate::smi::{GainState, SetFunctionKind};

/// Inner (per step) and outer selection budgets, split evenly across `way` classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub b_in: usize,
    pub b_out: usize,
    pub way: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            b_in: 25,
            b_out: 50,
            way: 5,
        }
    }
}

impl Budget {
    pub fn new(b_in: usize, b_out: usize, way: usize) -> Result<Self> {
        let b = Self { b_in, b_out, way };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.way == 0 {
            return Err(Error::Config("budget needs at least one class".into()));
        }
        if self.b_in % self.way != 0 || self.b_out % self.way != 0 {
            return Err(Error::Config(format!(
                "budgets {} / {} are not divisible by {} classes",
                self.b_in, self.b_out, self.way
            )));
        }
        Ok(())
    }

    pub fn per_class_in(&self) -> usize {
        self.b_in / self.way
    }

    pub fn per_class_out(&self) -> usize {
        self.b_out / self.way
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionOrigin {
    Inner,
    Outer,
}

/// Whether query-side rows may include the labeled query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Rows are support and query points.
    MetaTrain,
    /// Rows are support points only; query labels are the evaluation target.
    MetaTest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedEntry {
    /// Index into the episode's unlabeled pool.
    pub pool_index: usize,
    pub label: usize,
    pub gain: f64,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedSubset {
    pub entries: Vec<SelectedEntry>,
    pub origin: SelectionOrigin,
    /// Set when the pool could not cover the full budget.
    pub exhausted: bool,
}

impl SelectedSubset {
    pub fn empty(origin: SelectionOrigin) -> Self {
        Self {
            entries: Vec::new(),
            origin,
            exhausted: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.pool_index).collect()
    }

    pub fn label_counts(&self, way: usize) -> Vec<usize> {
        let mut counts = vec![0; way];
        for e in &self.entries {
            if e.label < way {
                counts[e.label] += 1;
            }
        }
        counts
    }

    /// Append `other`'s entries; the exhausted flag is sticky.
    pub fn extend(&mut self, other: SelectedSubset) {
        self.exhausted |= other.exhausted;
        self.entries.extend(other.entries);
    }

    pub fn with_step(mut self, step: usize) -> Self {
        for e in &mut self.entries {
            e.step = step;
        }
        self
    }

    /// Selected unlabeled points paired with their hypothesized labels.
    pub fn pseudo_examples<'e>(&self, episode: &'e Episode) -> Vec<Example<'e>> {
        self.entries
            .iter()
            .map(|e| (episode.unlabeled_x[e.pool_index].as_slice(), e.label))
            .collect()
    }
}

/// Maximize one SMI instantiation per row class over the shared `pool` of kernel
/// columns, `budget_per_class` winners each, with cross-class exclusion.
pub fn per_class_select(
    kernel: &Kernel,
    pool: &[usize],
    budget_per_class: usize,
    kind: SetFunctionKind,
    maximizer: MaximizerKind,
    rng_seed: u64,
    origin: SelectionOrigin,
) -> Result<SelectedSubset> {
    if !kind.is_mutual_information() {
        return Err(Error::Input(format!(
            "per-class selection needs an SMI function, got {}",
            kind.name()
        )));
    }
    maximizer.validate()?;
    let mut taken = vec![false; kernel.cols()];
    let mut out = SelectedSubset::empty(origin);
    for class in kernel.classes() {
        let sub = kernel.class_rows(class);
        let mut state = GainState::new(kind, &sub)?;
        let available: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&j| j < taken.len() && !taken[j])
            .collect();
        let res = maximize::maximize(
            &mut state,
            &available,
            budget_per_class,
            maximizer,
            seed::derive(rng_seed, &[class as u64]),
        )?;
        if res.selected.len() < budget_per_class {
            out.exhausted = true;
        }
        for (&col, &gain) in res.selected.iter().zip(&res.gains) {
            taken[col] = true;
            out.entries.push(SelectedEntry {
                pool_index: kernel.col_index()[col],
                label: class,
                gain,
                step: 0,
            });
        }
    }
    Ok(out)
}

/// One-hot query rows for `phase`: support and query at meta-train, support only at meta-test.
pub fn query_rows(episode: &Episode, phase: Phase) -> Result<(Vec<Embedding>, Vec<usize>)> {
    let labels: Vec<usize> = match phase {
        Phase::MetaTrain => episode
            .support_y
            .iter()
            .chain(&episode.query_y)
            .copied()
            .collect(),
        Phase::MetaTest => episode.support_y.clone(),
    };
    Ok((kernel::onehot_embed(&labels, episode.way)?, labels))
}

/// Kernel between the labeled query rows and the unlabeled points in `pool`
/// (episode unlabeled indices), embedded with `model`.
pub fn episode_kernel(
    model: &ParamVector,
    episode: &Episode,
    pool: &[usize],
    phase: Phase,
) -> Result<Kernel> {
    if model.num_classes() != episode.way {
        return Err(Error::Config(format!(
            "classifier has {} outputs, episode is {}-way",
            model.num_classes(),
            episode.way
        )));
    }
    let (rows, row_class) = query_rows(episode, phase)?;
    let points: Vec<&[f64]> = pool.iter().map(|&i| episode.unlabeled_x[i].as_slice()).collect();
    let cols = kernel::prob_embed(model, &points)?;
    kernel::cosine_kernel(&rows, &cols)?
        .with_row_classes(row_class)?
        .with_col_index(pool.to_vec())
}

/// SMI selection over an explicit pool of unlabeled indices.
#[allow(clippy::too_many_arguments)]
pub fn select_from_pool(
    model: &ParamVector,
    episode: &Episode,
    pool: &[usize],
    budget_per_class: usize,
    kind: SetFunctionKind,
    maximizer: MaximizerKind,
    phase: Phase,
    origin: SelectionOrigin,
    rng_seed: u64,
) -> Result<SelectedSubset> {
    if pool.is_empty() {
        let mut s = SelectedSubset::empty(origin);
        s.exhausted = budget_per_class > 0;
        return Ok(s);
    }
    let k = episode_kernel(model, episode, pool, phase)?;
    let cols: Vec<usize> = (0..k.cols()).collect();
    per_class_select(&k, &cols, budget_per_class, kind, maximizer, rng_seed, origin)
}

/// Unlabeled indices not present in any of `exclude`.
pub fn remaining_pool(episode: &Episode, exclude: &SelectedSubset) -> Vec<usize> {
    let mut used = vec![false; episode.unlabeled_len()];
    for e in &exclude.entries {
        used[e.pool_index] = true;
    }
    (0..episode.unlabeled_len()).filter(|&i| !used[i]).collect()
}

/// Fresh inner-loop selection of `b_in` points at `step`, excluding those
/// already accumulated in earlier steps.
#[allow(clippy::too_many_arguments)]
pub fn inner_select(
    model: &ParamVector,
    episode: &Episode,
    already: &SelectedSubset,
    budget: Budget,
    kind: SetFunctionKind,
    maximizer: MaximizerKind,
    phase: Phase,
    step: usize,
    rng_seed: u64,
) -> Result<SelectedSubset> {
    check_way(&budget, episode)?;
    let pool = remaining_pool(episode, already);
    Ok(select_from_pool(
        model,
        episode,
        &pool,
        budget.per_class_in(),
        kind,
        maximizer,
        phase,
        SelectionOrigin::Inner,
        rng_seed,
    )?
    .with_step(step))
}

/// Outer-loop selection of `b_out` points from the pool left after inner selection,
/// embedded with the adapted parameters.
pub fn outer_select(
    adapted: &ParamVector,
    episode: &Episode,
    inner_selected: &SelectedSubset,
    budget: Budget,
    kind: SetFunctionKind,
    maximizer: MaximizerKind,
    rng_seed: u64,
) -> Result<SelectedSubset> {
    check_way(&budget, episode)?;
    let pool = remaining_pool(episode, inner_selected);
    select_from_pool(
        adapted,
        episode,
        &pool,
        budget.per_class_out(),
        kind,
        maximizer,
        Phase::MetaTrain,
        SelectionOrigin::Outer,
        rng_seed,
    )
}

fn check_way(budget: &Budget, episode: &Episode) -> Result<()> {
    budget.validate()?;
    if budget.way != episode.way {
        return Err(Error::Config(format!(
            "budget is split over {} classes, episode is {}-way",
            budget.way, episode.way
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionAccuracy {
    /// Fraction of entries whose hypothesized label is the true label.
    pub label_match: f64,
    /// Fraction of entries drawn from the episode's own classes.
    pub in_dist: f64,
    pub empty: bool,
}

pub fn selection_accuracy(subset: &SelectedSubset, episode: &Episode) -> SelectionAccuracy {
    if subset.is_empty() {
        return SelectionAccuracy {
            label_match: 0.0,
            in_dist: 0.0,
            empty: true,
        };
    }
    let n = subset.len() as f64;
    let (mut hits, mut inside) = (0usize, 0usize);
    for e in &subset.entries {
        let truth = episode.unlabeled_truth[e.pool_index];
        if !truth.is_ood {
            inside += 1;
        }
        if truth.label == Some(e.label) {
            hits += 1;
        }
    }
    SelectionAccuracy {
        label_match: hits as f64 / n,
        in_dist: inside as f64 / n,
        empty: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_two_class() -> Kernel {
        // class-0 rows resemble columns 0,1; class-1 rows resemble columns 2,3.
        Kernel::new(
            4,
            4,
            vec![
                0.9, 0.8, 0.1, 0.0, //
                0.85, 0.9, 0.0, 0.1, //
                0.1, 0.0, 0.9, 0.8, //
                0.0, 0.1, 0.7, 0.9,
            ],
            vec![0, 0, 1, 1],
            vec![10, 11, 12, 13],
        )
        .unwrap()
    }

    #[test]
    fn budget_divisibility() {
        assert!(Budget::new(25, 50, 5).is_ok());
        assert!(Budget::new(24, 50, 5).is_err());
        let b = Budget::new(25, 50, 5).unwrap();
        assert_eq!((b.per_class_in(), b.per_class_out()), (5, 10));
    }

    #[test]
    fn toy_kernel_classes_get_their_columns() {
        let k = toy_two_class();
        for kind in [SetFunctionKind::Flmi, SetFunctionKind::Gcmi] {
            let s = per_class_select(
                &k,
                &[0, 1, 2, 3],
                2,
                kind,
                MaximizerKind::Lazy,
                0,
                SelectionOrigin::Inner,
            )
            .unwrap();
            let mut by_class: Vec<(usize, usize)> =
                s.entries.iter().map(|e| (e.label, e.pool_index)).collect();
            by_class.sort();
            assert_eq!(by_class, vec![(0, 10), (0, 11), (1, 12), (1, 13)]);
            assert!(!s.exhausted);
        }
    }

    #[test]
    fn single_class_is_plain_maximization() {
        let k = Kernel::from_rows(&[vec![0.9, 0.1, 0.5], vec![0.2, 0.8, 0.4]]).unwrap();
        let s = per_class_select(
            &k,
            &[0, 1, 2],
            2,
            SetFunctionKind::Gcmi,
            MaximizerKind::Naive,
            0,
            SelectionOrigin::Inner,
        )
        .unwrap();
        assert_eq!(s.indices(), vec![0, 1]);
        assert!(s.entries.iter().all(|e| e.label == 0));
    }

    #[test]
    fn exhaustion_is_flagged() {
        let k = toy_two_class();
        let s = per_class_select(
            &k,
            &[0, 1, 2],
            2,
            SetFunctionKind::Flmi,
            MaximizerKind::Lazy,
            0,
            SelectionOrigin::Outer,
        )
        .unwrap();
        assert!(s.exhausted);
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn non_smi_kind_rejected() {
        let k = toy_two_class();
        assert!(per_class_select(
            &k,
            &[0],
            1,
            SetFunctionKind::Fl,
            MaximizerKind::Lazy,
            0,
            SelectionOrigin::Inner
        )
        .is_err());
    }
}
