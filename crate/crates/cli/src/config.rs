//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use mtgp::data::{SeriesSchema, SplitStrategy};
use mtgp::gp::NoiseMode;
use mtgp::multitask::KernelFamily;
use mtgp::spectral::InitConfig;
use mtgp::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_synthetic_n")]
        n: usize,
        #[serde(default = "default_interval")]
        interval: (f64, f64),
        /// Components of the SM kernel the signal is drawn from.
        #[serde(default = "default_synthetic_q")]
        q: usize,
    },
    /// One file with a task column, or one file per task.
    Csv {
        paths: Vec<PathBuf>,
        #[serde(default)]
        schema: SeriesSchema,
    },
}

fn default_synthetic_n() -> usize {
    300
}

fn default_interval() -> (f64, f64) {
    (-10.0, 10.0)
}

fn default_synthetic_q() -> usize {
    3
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            n: default_synthetic_n(),
            interval: default_interval(),
            q: default_synthetic_q(),
        }
    }
}

/// Split rule for one task; a random split without a seed derives it from
/// the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRule {
    RandomHalf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    FirstHalf,
    LastHalf,
    All,
}

impl SplitRule {
    pub fn resolve(self, experiment_seed: u64, task: usize) -> SplitStrategy {
        match self {
            SplitRule::RandomHalf { seed } => SplitStrategy::RandomHalf {
                seed: seed.unwrap_or(experiment_seed.wrapping_add(task as u64)),
            },
            SplitRule::FirstHalf => SplitStrategy::FirstHalf,
            SplitRule::LastHalf => SplitStrategy::LastHalf,
            SplitRule::All => SplitStrategy::All,
        }
    }
}

/// Random, first-half and last-half splits, cycling over the tasks.
pub fn default_split(task: usize) -> SplitRule {
    match task % 3 {
        0 => SplitRule::RandomHalf { seed: None },
        1 => SplitRule::FirstHalf,
        _ => SplitRule::LastHalf,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Candidate kernel.
    pub kernel: KernelFamily,
    pub baselines: Vec<KernelFamily>,
    pub q: usize,
    pub data: DataSource,
    /// Per-task split rules; missing entries use the default cycle.
    pub splits: Vec<SplitRule>,
    pub noise_mode: NoiseMode,
    /// Standardize every task with its training mean and deviation.
    pub standardize: bool,
    pub train: TrainConfig,
    pub init: InitConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            kernel: KernelFamily::GcsmCc,
            baselines: vec![KernelFamily::SmLmc],
            q: 10,
            data: DataSource::default(),
            splits: Vec::new(),
            noise_mode: NoiseMode::Shared,
            standardize: true,
            train: TrainConfig::default(),
            init: InitConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; relative data paths are taken relative to the file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text).map_err(json_err(path))?;
        if let DataSource::Csv { paths, .. } = &mut config.data {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.q == 0 {
            return Err(CliError::Config("q must be at least 1".into()));
        }
        self.train.validate()?;
        match &self.data {
            DataSource::Synthetic { n, q, interval } => {
                if *n < 3 || *q == 0 || !(interval.1 > interval.0) {
                    return Err(CliError::Config("invalid synthetic data settings".into()));
                }
            }
            DataSource::Csv { paths, .. } => {
                if paths.is_empty() {
                    return Err(CliError::Config("csv source needs at least one path".into()));
                }
            }
        }
        Ok(())
    }

    pub fn split_rule(&self, task: usize) -> SplitRule {
        self.splits.get(task).copied().unwrap_or_else(|| default_split(task))
    }
}
