//! Run-wide configuration file (JSON) and seed resolution.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calib::TrainConfig;
use crate::dataio::SimulationPlan;
use crate::error::{Error, Result};
use crate::neural::{ModelSpec, Task};

pub const SEED_ENV: &str = "TACTFORGE_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlobalConfig {
    pub seed: Option<u64>,
    /// Worker threads; `None` lets rayon decide.
    pub threads: Option<usize>,
    /// Simulation plan, including the sensor description.
    pub simulation: SimulationPlan,
    pub depth_model: ModelSpec,
    pub wrench_model: ModelSpec,
    pub depth_training: TrainConfig,
    pub wrench_training: TrainConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            seed: None,
            threads: None,
            simulation: SimulationPlan::default(),
            depth_model: ModelSpec::desk(Task::Depth),
            wrench_model: ModelSpec::desk(Task::Wrench),
            depth_training: TrainConfig::depth(),
            wrench_training: TrainConfig::wrench(),
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<GlobalConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: GlobalConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        self.simulation.validate()?;
        for (spec, task) in [(&self.depth_model, Task::Depth), (&self.wrench_model, Task::Wrench)] {
            spec.validate()?;
            if spec.task != task {
                return Err(Error::invalid(format!("{task:?} model spec has the wrong task")));
            }
        }
        self.depth_training.validate(Task::Depth)?;
        self.wrench_training.validate(Task::Wrench)
    }

    pub fn model(&self, task: Task) -> &ModelSpec {
        match task {
            Task::Depth => &self.depth_model,
            Task::Wrench => &self.wrench_model,
        }
    }

    pub fn training(&self, task: Task) -> &TrainConfig {
        match task {
            Task::Depth => &self.depth_training,
            Task::Wrench => &self.wrench_training,
        }
    }

    /// Flag, then config file, then environment, then [`DEFAULT_SEED`].
    pub fn resolve_seed(&self, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match env {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            None => Ok(DEFAULT_SEED),
        }
    }
}
