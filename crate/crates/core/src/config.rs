//! JSON run configuration shared by the command-line tools.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::models::{Architecture, TrainConfig};
use crate::patch::MixupConfig;
use crate::spectra::FrameParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPaths {
    pub manifest: PathBuf,
    pub feature_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_arch")]
    pub architecture: Architecture,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mixup: MixupConfig,
    #[serde(default)]
    pub frame: FrameParams,
    pub paths: RunPaths,
}

fn default_arch() -> Architecture {
    Architecture::Joint
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.manifest,
            &mut cfg.paths.feature_dir,
            &mut cfg.paths.checkpoint_dir,
            &mut cfg.paths.report_dir,
        ] {
            *p = crate::pipeline::resolve_path(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks values and paths without touching the file system beyond
    /// existence checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mixup.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.frame.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !self.paths.manifest.is_file() {
            return Err(ConfigError::Invalid(format!(
                "manifest {} does not exist",
                self.paths.manifest.display()
            )));
        }
        for dir in [&self.paths.feature_dir, &self.paths.checkpoint_dir, &self.paths.report_dir] {
            if dir.exists() && !dir.is_dir() {
                return Err(ConfigError::Invalid(format!("{} exists and is not a directory", dir.display())));
            }
        }
        Ok(())
    }
}
