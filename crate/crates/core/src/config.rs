//! Run configuration: one TOML file with dataset, model, trainer and
//! evaluation sections.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{build_splits, load_dataset, write_dataset, SolverConfig, Split, SplitSpec, Splits};
use crate::error::{CoreError, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct DatasetConfig {
    /// Directory holding `train.bin`, `valid.bin` and `test.bin`; the ADR
    /// benchmark is generated from `adr` when unset.
    pub path: Option<PathBuf>,
    pub adr: SplitSpec,
}


impl DatasetConfig {
    /// Load the three splits from `path`, or generate them.
    pub fn splits(&self) -> Result<Splits> {
        let Some(dir) = &self.path else {
            return build_splits(&self.adr);
        };
        let load = |split: Split| -> Result<_> {
            let ds = load_dataset(&dir.join(format!("{split}.bin")))?;
            if ds.split != split {
                return Err(CoreError::Invalid(format!(
                    "{}/{split}.bin holds the {} split",
                    dir.display(),
                    ds.split
                )));
            }
            Ok(ds)
        };
        Ok(Splits {
            train: load(Split::Train)?,
            valid: load(Split::Valid)?,
            test: load(Split::Test)?,
        })
    }
}

/// Write `train.bin`, `valid.bin` and `test.bin` into `dir`.
pub fn write_splits(splits: &Splits, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    [&splits.train, &splits.valid, &splits.test]
        .into_iter()
        .map(|ds| {
            let p = dir.join(format!("{}.bin", ds.split));
            write_dataset(ds, &p)?;
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Rollout lengths at which the mean error is reported.
    pub horizons: Vec<usize>,
    /// Simulations advanced together.
    pub batch: usize,
    /// Steps shown in the field/prediction/error images.
    pub triplet_steps: Vec<usize>,
    /// Test simulations that get images.
    pub triplet_sims: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizons: vec![400, 1000],
            batch: 16,
            triplet_steps: vec![1, 100, 400],
            triplet_sims: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub trainer: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// CPU-scale setup: 64 training simulations of 100 steps spaced 4π/100
    /// apart (two periods of the advection field), test simulations of 200
    /// steps, the small model and 10k optimizer steps.
    pub fn desk() -> Self {
        RunConfig {
            dataset: DatasetConfig {
                path: None,
                adr: SplitSpec {
                    n_train: 64,
                    n_valid: 8,
                    n_test: 16,
                    train_steps: 100,
                    test_steps: 200,
                    solver: SolverConfig {
                        dt: 4.0 * PI / 100.0,
                        substeps: 16,
                        ..SolverConfig::default()
                    },
                    ..SplitSpec::default()
                },
            },
            model: ModelConfig::desk(),
            trainer: TrainConfig {
                steps: 10_000,
                lr: 1e-3,
                batch: 8,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                horizons: vec![100, 200],
                batch: 16,
                triplet_steps: vec![1, 100, 200],
                triplet_sims: 2,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| CoreError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        if self.eval.horizons.contains(&0) || self.eval.batch == 0 {
            return Err(CoreError::config("eval horizons and batch must be positive"));
        }
        let a = &self.dataset.adr;
        if a.seed > i64::MAX as u64 || self.trainer.seed > i64::MAX as u64 {
            return Err(CoreError::config("seeds must fit in a signed 64-bit integer"));
        }
        if self.dataset.path.is_none() && (a.n_train == 0 || a.n_valid == 0 || a.train_steps == 0) {
            return Err(CoreError::config("generated dataset needs train and valid simulations"));
        }
        Ok(())
    }
}
