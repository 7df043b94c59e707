//! Run configuration: a TOML file with `[run]`, `[trainer]` and either a
//! `[synthetic]` suite block or a `[data]` block pointing at 9 + 9 CSV files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, synthesize_suite, SuiteConfig, TaskSequence};
use crate::error::{Error, Result};
use crate::trainer::TrainerConfig;

pub const DEFAULT_CONFIG_ENV: &str = "DRIFTCL_CONFIG";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// One full benchmark run per seed; aggregates are mean ± std over them.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Worker threads for independent seed runs.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2, 3, 4], output_dir: PathBuf::from("out"), jobs: 1 }
    }
}

/// CSV ingestion alternative to the synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSources {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run: RunSection,
    pub synthetic: Option<SuiteConfig>,
    pub data: Option<CsvSources>,
    pub trainer: TrainerConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.run.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.synthetic.is_some() && self.data.is_some() {
            return Err(Error::Config(
                "choose either a [synthetic] block or a [data] block, not both".into(),
            ));
        }
        if let Some(data) = &self.data {
            if data.train.len() != 9 || data.test.len() != 9 {
                return Err(Error::Config(format!(
                    "CSV mode needs exactly 9 train and 9 test files, got {} and {}",
                    data.train.len(),
                    data.test.len()
                )));
            }
        }
        self.trainer.validate()
    }

    /// The suite generator parameters in effect (CSV mode has none).
    pub fn suite(&self) -> SuiteConfig {
        self.synthetic.clone().unwrap_or_default()
    }

    /// Materializes the task sequence for one seeded run. Synthetic suites
    /// are regenerated per seed; CSV data is fixed, only training varies.
    pub fn load_tasks(&self, seed: u64) -> Result<TaskSequence> {
        if let Some(data) = &self.data {
            let mut train = Vec::with_capacity(data.train.len());
            let mut test = Vec::with_capacity(data.test.len());
            for (id, path) in data.train.iter().enumerate() {
                train.push(load_csv(path, id)?);
            }
            for (id, path) in data.test.iter().enumerate() {
                test.push(load_csv(path, id)?);
            }
            return TaskSequence::from_experiments(train, test);
        }
        let suite = SuiteConfig { seed, ..self.suite() };
        let (train, test) = synthesize_suite(&suite)?;
        TaskSequence::from_experiments(train, test)
    }

    /// Trainer parameters for one seeded run.
    pub fn trainer_for_seed(&self, seed: u64) -> TrainerConfig {
        TrainerConfig { seed, ..self.trainer.clone() }
    }
}
