//! JSON checkpoints for [`PatchMlp`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Schedule;

use super::model::{ModelConfig, PatchMlp};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schedule_hash: String,
    pub schedule: Schedule,
    pub seed: u64,
    pub model: ModelConfig,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &PatchMlp, seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            schedule_hash: model.schedule().fingerprint(),
            schedule: *model.schedule(),
            seed,
            model: model.config().clone(),
            params: model.params().to_vec(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rebuilds the model, refusing checkpoints trained under a different
    /// schedule than `expected`.
    pub fn into_model(self, expected: &Schedule) -> Result<PatchMlp> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let want = expected.fingerprint();
        if self.schedule_hash != want || self.schedule.fingerprint() != want {
            return Err(Error::ScheduleMismatch {
                expected: want,
                found: self.schedule_hash,
            });
        }
        PatchMlp::from_params(self.model, self.schedule, self.params)
    }

    pub fn load(path: impl AsRef<Path>, expected: &Schedule) -> Result<PatchMlp> {
        Self::read(path)?.into_model(expected)
    }
}
