//! Cardinality-constrained greedy maximization over a [`GainState`].
//!
//! All variants break ties between equal gains in favour of the lowest column
//! index, so `naive_greedy` and `lazy_greedy` produce identical results, and
//! `stochastic_greedy` with a sample covering the whole pool does too.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::seed;
use crate::smi::{GainState, SetFunctionKind};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MaximizerKind {
    Naive,
    #[default]
    Lazy,
    Stochastic { epsilon: f64 },
}

impl MaximizerKind {
    pub fn validate(&self) -> Result<()> {
        if let MaximizerKind::Stochastic { epsilon } = self {
            if !(*epsilon > 0.0 && *epsilon < 1.0) {
                return Err(Error::Config(format!(
                    "stochastic greedy epsilon must be in (0, 1), got {epsilon}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GreedyResult {
    /// Column indices in selection order.
    pub selected: Vec<usize>,
    /// Marginal gain of each element when it was selected.
    pub gains: Vec<f64>,
    pub final_value: f64,
    /// Number of marginal-gain evaluations performed.
    pub evaluations: usize,
}

/// Sorted, de-duplicated candidates that are not already in the state.
fn candidates(state: &GainState<'_>, pool: &[usize]) -> Result<Vec<usize>> {
    let mut c: Vec<usize> = pool.to_vec();
    c.sort_unstable();
    c.dedup();
    if let Some(&bad) = c.iter().find(|&&x| x >= state.ground_size()) {
        return Err(Error::Input(format!(
            "pool index {bad} out of range for {} columns",
            state.ground_size()
        )));
    }
    c.retain(|&x| !state.contains(x));
    Ok(c)
}

/// Index (into `cands`) of the best candidate; ties go to the earliest, i.e. lowest column.
fn best_of(
    state: &GainState<'_>,
    cands: impl Iterator<Item = usize>,
    remaining: &[usize],
    evaluations: &mut usize,
) -> Result<Option<(usize, f64)>> {
    let mut best: Option<(usize, f64)> = None;
    for pos in cands {
        let g = state.marginal_gain(remaining[pos])?;
        *evaluations += 1;
        let better = match best {
            None => true,
            Some((bp, bg)) => g > bg || (g == bg && remaining[pos] < remaining[bp]),
        };
        if better {
            best = Some((pos, g));
        }
    }
    Ok(best)
}

pub fn naive_greedy(state: &mut GainState<'_>, pool: &[usize], budget: usize) -> Result<GreedyResult> {
    let mut remaining = candidates(state, pool)?;
    let mut out = GreedyResult::default();
    while out.selected.len() < budget && !remaining.is_empty() {
        let (pos, _) = best_of(state, 0..remaining.len(), &remaining, &mut out.evaluations)?
            .expect("remaining is non-empty");
        let x = remaining.remove(pos);
        let gain = state.commit(x)?;
        out.selected.push(x);
        out.gains.push(gain);
    }
    out.final_value = state.current_value();
    Ok(out)
}

struct HeapEntry {
    bound: f64,
    index: usize,
    /// Selection round in which `bound` was computed.
    round: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Max-heap on bound, then lowest index first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Greedy with memoized upper bounds: a max-heap of possibly stale gains where only
/// the top is re-evaluated, relying on gains never increasing as the set grows.
pub fn lazy_greedy(state: &mut GainState<'_>, pool: &[usize], budget: usize) -> Result<GreedyResult> {
    let remaining = candidates(state, pool)?;
    let mut out = GreedyResult::default();
    if budget == 0 || remaining.is_empty() {
        out.final_value = state.current_value();
        return Ok(out);
    }
    // GCMI gains do not depend on the selected set, so its bounds never go stale.
    let static_gains = matches!(state.kind(), SetFunctionKind::Gcmi);
    let mut heap = BinaryHeap::with_capacity(remaining.len());
    for &x in &remaining {
        heap.push(HeapEntry {
            bound: state.marginal_gain(x)?,
            index: x,
            round: 0,
        });
        out.evaluations += 1;
    }
    let mut round = 0;
    while out.selected.len() < budget {
        let Some(top) = heap.pop() else { break };
        if top.round == round || static_gains {
            let gain = state.commit(top.index)?;
            out.selected.push(top.index);
            out.gains.push(gain);
            round += 1;
        } else {
            let bound = state.marginal_gain(top.index)?;
            out.evaluations += 1;
            heap.push(HeapEntry {
                bound,
                index: top.index,
                round,
            });
        }
    }
    out.final_value = state.current_value();
    Ok(out)
}

/// Per-step sample size `ceil((n / k) * ln(1 / epsilon))`, at least 1.
pub fn stochastic_sample_size(pool_size: usize, budget: usize, epsilon: f64) -> usize {
    if budget == 0 {
        return 0;
    }
    let s = (pool_size as f64 / budget as f64) * (1.0 / epsilon).ln();
    (s.ceil() as usize).max(1)
}

/// Stochastic ("lazier than lazy") greedy: each step evaluates a uniform random
/// sample of the remaining pool and commits its best element.
pub fn stochastic_greedy(
    state: &mut GainState<'_>,
    pool: &[usize],
    budget: usize,
    epsilon: f64,
    rng_seed: u64,
) -> Result<GreedyResult> {
    MaximizerKind::Stochastic { epsilon }.validate()?;
    let mut remaining = candidates(state, pool)?;
    let sample_size = stochastic_sample_size(remaining.len(), budget, epsilon);
    let mut rng = seed::rng(rng_seed);
    let mut out = GreedyResult::default();
    while out.selected.len() < budget && !remaining.is_empty() {
        let best = if sample_size >= remaining.len() {
            best_of(state, 0..remaining.len(), &remaining, &mut out.evaluations)?
        } else {
            let picks = rand::seq::index::sample(&mut rng, remaining.len(), sample_size);
            best_of(state, picks.into_iter(), &remaining, &mut out.evaluations)?
        };
        let (pos, _) = best.expect("sample is non-empty");
        let x = remaining.remove(pos);
        let gain = state.commit(x)?;
        out.selected.push(x);
        out.gains.push(gain);
    }
    out.final_value = state.current_value();
    Ok(out)
}

pub fn maximize(
    state: &mut GainState<'_>,
    pool: &[usize],
    budget: usize,
    kind: MaximizerKind,
    rng_seed: u64,
) -> Result<GreedyResult> {
    match kind {
        MaximizerKind::Naive => naive_greedy(state, pool, budget),
        MaximizerKind::Lazy => lazy_greedy(state, pool, budget),
        MaximizerKind::Stochastic { epsilon } => {
            stochastic_greedy(state, pool, budget, epsilon, rng_seed)
        }
    }
}

const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    debug_assert!(k <= n);
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact maximum over all subsets of `pool` with at most `budget` elements, by
/// enumeration with from-scratch evaluation. Ties keep the lexicographically first set.
pub fn brute_force_max(
    kind: SetFunctionKind,
    kernel: &Kernel,
    pool: &[usize],
    budget: usize,
) -> Result<(Vec<usize>, f64)> {
    let mut items = pool.to_vec();
    items.sort_unstable();
    items.dedup();
    let n = items.len();
    let k_max = budget.min(n);
    let total: u128 = (0..=k_max).map(|k| binomial(n, k)).sum();
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::Size(format!(
            "{total} subsets of a {n}-element pool exceed the enumeration limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let mut best_set = Vec::new();
    let mut best_value = kind.eval(&[], kernel)?;
    let mut current = Vec::with_capacity(k_max);
    fn recurse(
        start: usize,
        items: &[usize],
        k_max: usize,
        current: &mut Vec<usize>,
        kind: SetFunctionKind,
        kernel: &Kernel,
        best: &mut (Vec<usize>, f64),
    ) -> Result<()> {
        for i in start..items.len() {
            current.push(items[i]);
            let v = kind.eval(current, kernel)?;
            if v > best.1 {
                *best = (current.clone(), v);
            }
            if current.len() < k_max {
                recurse(i + 1, items, k_max, current, kind, kernel, best)?;
            }
            current.pop();
        }
        Ok(())
    }
    if k_max > 0 {
        let mut best = (best_set, best_value);
        recurse(0, &items, k_max, &mut current, kind, kernel, &mut best)?;
        (best_set, best_value) = best;
    }
    Ok((best_set, best_value))
}
