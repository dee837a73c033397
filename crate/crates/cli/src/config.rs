use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smi_meta::episodes::{gen_synthetic_with_split, ClassSplit, SyntheticDataset};
use smi_meta::{Error, Result, StrategyKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub dim: usize,
    pub per_class: usize,
    pub spread: f64,
    pub split: ClassSplit,
    pub rho: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 100,
            dim: 32,
            per_class: 400,
            spread: 0.3,
            split: ClassSplit {
                train: 20,
                val: 12,
                test: 12,
            },
            rho: 0.05,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must be in (0, 1], got {}", self.rho)));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(Error::Config(format!("spread must be positive, got {}", self.spread)));
        }
        if self.dim == 0 || self.per_class == 0 || self.split.total() == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticDataset> {
        gen_synthetic_with_split(self.seed, self.dim, self.per_class, self.spread, self.split)?
            .split_labeled(self.rho, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub ood_classes: Vec<usize>,
    pub strategies: Vec<StrategyKind>,
    pub outer_selection: Vec<bool>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            ood_classes: vec![0, 3, 5, 7],
            strategies: vec![StrategyKind::PL, StrategyKind::FLMI, StrategyKind::GCMI],
            outer_selection: vec![true, false],
        }
    }
}

/// One JSON document describing a full experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub n_test_episodes: Option<usize>,
    pub ablation: AblationConfig,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_test_episodes(&self) -> usize {
        self.n_test_episodes.unwrap_or(600)
    }

    /// Everything is checked here, before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if self.train.widths[0] != self.dataset.dim {
            return Err(Error::Config(format!(
                "classifier input {} does not match dataset dimension {}",
                self.train.widths[0], self.dataset.dim
            )));
        }
        let split = self.dataset.split;
        let need = self.train.shape.way + self.train.shape.ood;
        let max_ood = self.ablation.ood_classes.iter().copied().max().unwrap_or(0);
        let sweep_need = self.train.shape.way + max_ood;
        for (name, n) in [("train", split.train), ("val", split.val), ("test", split.test)] {
            if name == "val" && self.train.val_episodes == 0 {
                continue;
            }
            if n < need {
                return Err(Error::Config(format!(
                    "{name} split has {n} classes, episodes need {need}"
                )));
            }
        }
        if self.n_test_episodes() == 0 {
            return Err(Error::Config("n_test_episodes must be >= 1".into()));
        }
        for s in &self.ablation.strategies {
            s.validate()?;
        }
        let mut smallest = split.train.min(split.test);
        if self.train.val_episodes > 0 {
            smallest = smallest.min(split.val);
        }
        if smallest < sweep_need {
            return Err(Error::Config(format!(
                "ablation up to {max_ood} distractors needs {sweep_need} classes per split"
            )));
        }
        Ok(())
    }
}
