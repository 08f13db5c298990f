//! TOML experiment configuration and flag overrides.

use std::fmt::Debug;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vpidm::corpus::CorpusSpec;
use vpidm::sampler::SamplerConfig;
use vpidm::score::TrainConfig;
use vpidm::{CompressionConfig, Schedule, StftConfig};

use crate::CliError;

pub const RESOLVED_CONFIG_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schedule: Schedule,
    pub stft: StftConfig,
    pub compression: CompressionConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub corpus: CorpusSpec,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string_pretty(self).map_err(|e| CliError::Usage(format!("serializing config: {e}")))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn record(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(RESOLVED_CONFIG_NAME);
        std::fs::write(&path, self.to_toml()?)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.schedule.validate()?;
        self.stft.validate()?;
        self.compression.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// Applies a flag value over a config field. The flag wins; a differing
/// config value is reported on stderr.
pub fn apply<T: PartialEq + Debug>(field: &mut T, flag: Option<T>, name: &str) {
    if let Some(v) = flag {
        if *field != v {
            eprintln!("override: {name} = {v:?} (config had {field:?})");
        }
        *field = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        for section in ["[schedule]", "[stft]", "[sampler]", "[train]"] {
            assert!(text.contains(section), "{section} missing");
        }
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let cfg: ExperimentConfig = toml::from_str("[sampler]\nk = 10\n[schedule]\ngamma = 2.0\n").unwrap();
        assert_eq!(cfg.sampler.k, 10);
        assert_eq!(cfg.sampler.k1, 12);
        assert_eq!(cfg.schedule.gamma, 2.0);
        assert_eq!(cfg.schedule.beta_max, 2.0);
    }

    #[test]
    fn flag_wins() {
        let mut k = 25usize;
        apply(&mut k, Some(10), "sampler.k");
        assert_eq!(k, 10);
        apply(&mut k, None, "sampler.k");
        assert_eq!(k, 10);
    }
}
