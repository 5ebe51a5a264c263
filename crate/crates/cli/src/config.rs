//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use d3po_core::d3po::TrainConfig;
use d3po_core::diffusion::{DenoiserConfig, PretrainConfig, ScheduleSpec, ShapeDatasetSpec};
use d3po_core::preference::ObjectiveKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const HOME_ENV: &str = "D3PO_HOME";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub guidance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 256,
            guidance: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub pairs_per_epoch: usize,
    pub min_labeled: usize,
    pub claim_timeout_secs: f64,
    pub monitor_objective: Option<ObjectiveKind>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            pairs_per_epoch: 64,
            min_labeled: 16,
            claim_timeout_secs: 300.0,
            monitor_objective: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every component seed on [`RunConfig::resolve`].
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub data: ShapeDatasetSpec,
    pub schedule: ScheduleSpec,
    pub arch: DenoiserConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objective: ObjectiveKind::Compressibility,
            data: ShapeDatasetSpec::default(),
            schedule: ScheduleSpec::default(),
            arch: DenoiserConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the master seed and checks the pieces.
    pub fn resolve(mut self) -> Result<Self> {
        self.pretrain.seed = self.seed;
        self.train.seed = self.seed;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.arch.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.arch.side != self.data.side {
            return Err(CliError::Config(format!(
                "arch.side {} differs from data.side {}",
                self.arch.side, self.data.side
            )));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_SNAPSHOT), self.to_toml()?)?;
        Ok(())
    }
}

/// `--out` when given, else `$D3PO_HOME/<command>`, else `./runs/<command>`.
pub fn output_dir(out: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = out {
        return p.to_path_buf();
    }
    let root = std::env::var_os(HOME_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default().resolve().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 9\n[train]\nbeta = 0.5\n").unwrap();
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.train.beta, 0.5);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.pretrain.seed, 9);
        assert_eq!(cfg.schedule, ScheduleSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1\n").is_err());
    }
}
