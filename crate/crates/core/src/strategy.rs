//! Acquisition strategies for the unlabeled pool.
//!
//! Every strategy answers the same request (model, episode, pool, budget).
//! `Supervised` never selects anything,
//! `PseudoLabel` takes the globally most confident points, `Random` takes a
//! uniform sample, and `Smi` runs class-balanced SMI selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::maximize::MaximizerKind;
use crate::net::{self, ParamVector};
use crate::select::{self, Phase, SelectedEntry, SelectedSubset, SelectionOrigin};
use crate::smi::SetFunctionKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StrategyKind {
    Supervised,
    PseudoLabel { confidence_threshold: f64 },
    Random,
    Smi(SetFunctionKind),
}

impl StrategyKind {
    pub const FLMI: StrategyKind = StrategyKind::Smi(SetFunctionKind::Flmi);
    pub const GCMI: StrategyKind = StrategyKind::Smi(SetFunctionKind::Gcmi);
    pub const PL: StrategyKind = StrategyKind::PseudoLabel {
        confidence_threshold: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyKind::PseudoLabel {
                confidence_threshold: t,
            } if !(0.0..1.0).contains(t) => Err(Error::Config(format!(
                "pseudo-label confidence threshold must be in [0, 1), got {t}"
            ))),
            StrategyKind::Smi(kind) if !kind.is_mutual_information() => Err(Error::Config(
                format!("{} is not an SMI function", kind.name()),
            )),
            _ => Ok(()),
        }
    }

    pub fn selects(&self) -> bool {
        !matches!(self, StrategyKind::Supervised)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyKind::Supervised => write!(f, "supervised"),
            StrategyKind::PseudoLabel {
                confidence_threshold: t,
            } if *t == 0.0 => write!(f, "pl"),
            StrategyKind::PseudoLabel {
                confidence_threshold: t,
            } => write!(f, "pl:{t}"),
            StrategyKind::Random => write!(f, "random"),
            StrategyKind::Smi(kind) => write!(f, "{}", kind.name()),
        }
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    /// Accepts `supervised`, `pl`, `pl:<threshold>`, `random`, `flmi`, `gcmi`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let kind = match s.as_str() {
            "supervised" | "maml" => StrategyKind::Supervised,
            "pl" => StrategyKind::PL,
            "random" => StrategyKind::Random,
            "flmi" => StrategyKind::FLMI,
            "gcmi" => StrategyKind::GCMI,
            other => match other.strip_prefix("pl:") {
                Some(t) => StrategyKind::PseudoLabel {
                    confidence_threshold: t
                        .parse()
                        .map_err(|e| Error::Config(format!("bad threshold {t:?}: {e}")))?,
                },
                None => return Err(Error::Config(format!("unknown strategy {other:?}"))),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for StrategyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StrategyKind> for String {
    fn from(s: StrategyKind) -> String {
        s.to_string()
    }
}

/// Everything a strategy needs to pick points for one selection round.
#[derive(Debug, Clone, Copy)]
pub struct AcquireRequest<'a> {
    pub model: &'a ParamVector,
    pub episode: &'a Episode,
    /// Candidate indices into the episode's unlabeled pool.
    pub pool: &'a [usize],
    pub total_budget: usize,
    pub phase: Phase,
    pub maximizer: MaximizerKind,
    pub origin: SelectionOrigin,
    pub step: usize,
    pub seed: u64,
}

pub fn acquire(strategy: StrategyKind, req: &AcquireRequest<'_>) -> Result<SelectedSubset> {
    strategy.validate()?;
    let mut out = SelectedSubset::empty(req.origin);
    if !strategy.selects() || req.total_budget == 0 {
        return Ok(out);
    }
    if req.pool.is_empty() {
        out.exhausted = true;
        return Ok(out);
    }
    let subset = match strategy {
        StrategyKind::Supervised => unreachable!("handled above"),
        StrategyKind::Smi(kind) => {
            let way = req.episode.way;
            if req.total_budget % way != 0 {
                return Err(Error::Config(format!(
                    "budget {} is not divisible by {way} classes",
                    req.total_budget
                )));
            }
            select::select_from_pool(
                req.model,
                req.episode,
                req.pool,
                req.total_budget / way,
                kind,
                req.maximizer,
                req.phase,
                req.origin,
                req.seed,
            )?
        }
        StrategyKind::PseudoLabel {
            confidence_threshold,
        } => {
            let probs = pool_probs(req)?;
            let mut ranked: Vec<(usize, usize, f64)> = req
                .pool
                .iter()
                .zip(&probs)
                .map(|(&i, p)| {
                    let y = net::argmax(p);
                    (i, y, p[y])
                })
                .filter(|&(_, _, conf)| conf >= confidence_threshold)
                .collect();
            ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
            let exhausted = ranked.len() < req.total_budget;
            ranked.truncate(req.total_budget);
            SelectedSubset {
                entries: ranked
                    .into_iter()
                    .map(|(pool_index, label, gain)| SelectedEntry {
                        pool_index,
                        label,
                        gain,
                        step: 0,
                    })
                    .collect(),
                origin: req.origin,
                exhausted,
            }
        }
        StrategyKind::Random => {
            let mut rng = crate::seed::rng(req.seed);
            let n = req.total_budget.min(req.pool.len());
            let picks: Vec<usize> = rand::seq::index::sample(&mut rng, req.pool.len(), n)
                .into_iter()
                .map(|k| req.pool[k])
                .collect();
            let points: Vec<&[f64]> = picks
                .iter()
                .map(|&i| req.episode.unlabeled_x[i].as_slice())
                .collect();
            let probs = net::forward_batch(req.model, &points)?;
            SelectedSubset {
                entries: picks
                    .into_iter()
                    .zip(probs)
                    .map(|(pool_index, p)| {
                        let label = net::argmax(&p);
                        SelectedEntry {
                            pool_index,
                            label,
                            gain: p[label],
                            step: 0,
                        }
                    })
                    .collect(),
                origin: req.origin,
                exhausted: n < req.total_budget,
            }
        }
    };
    Ok(subset.with_step(req.step))
}

fn pool_probs(req: &AcquireRequest<'_>) -> Result<Vec<Vec<f64>>> {
    let points: Vec<&[f64]> = req
        .pool
        .iter()
        .map(|&i| req.episode.unlabeled_x[i].as_slice())
        .collect();
    net::forward_batch(req.model, &points)
}
