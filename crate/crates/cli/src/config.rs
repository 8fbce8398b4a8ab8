use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use efb_core::efb::{ArchConfig, TrainConfig};
use efb_core::SystemConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    pub train_log: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            checkpoint: "model.efbck".into(),
            output: "results.csv".into(),
            train_log: "train_log.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub test_seed: u64,
    pub test_size: usize,
    /// Channels in the holdout set scored after every training epoch.
    pub holdout_size: usize,
    /// Save an intermediate checkpoint every this many epochs; 0 saves only
    /// at the end.
    pub checkpoint_every: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { test_seed: 2024, test_size: 10_000, holdout_size: 1000, checkpoint_every: 0 }
    }
}

/// Everything a command needs, read from a TOML file whose tables mirror
/// the fields below. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub arch: ArchConfig,
    pub training: TrainConfig,
    pub eval: EvalSettings,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.system.validate()?;
        self.arch.validate()?;
        self.training.validate()?;
        if self.eval.test_size == 0 {
            bail!("eval.test_size must be positive");
        }
        Ok(())
    }
}
