//! Semi-supervised few-shot meta-learning in which submodular mutual information
//! picks pseudo-labeled unlabeled points inside first-order MAML.

pub mod episodes;
pub mod error;
pub mod kernel;
pub mod maximize;
pub mod meta;
pub mod net;
pub mod seed;
pub mod select;
pub mod smi;
pub mod strategy;

pub use episodes::{gen_synthetic, sample_episode, Episode, EpisodeShape, Split, SyntheticDataset};
pub use error::{Error, Result};
pub use kernel::{cosine_kernel, Kernel};
pub use maximize::{maximize, GreedyResult, MaximizerKind};
pub use meta::{adapt, meta_step, meta_test, meta_train, tau_in, tau_out, Schedules, TestSummary, TrainConfig};
pub use net::{init_params, ParamVector};
pub use select::{Budget, Phase, SelectedSubset};
pub use smi::SetFunctionKind;
pub use strategy::StrategyKind;
