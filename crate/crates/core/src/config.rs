//! One TOML file configures everything; a bare preset name (`tiny`,
//! `cvt13`) stands for that backbone with default training and service
//! settings.
//!
//! ```toml
//! [backbone]        # BackboneConfig, e.g. copied from a preset
//! [train]           # TrainConfig overrides
//! [train.augment]
//! [service]
//! host = "0.0.0.0"
//! port = 8000
//! max_upload_bytes = 10485760
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::BackboneConfig;
use crate::training::TrainConfig;

pub const DEFAULT_MAX_UPLOAD: usize = 10 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { host: "127.0.0.1".into(), port: 8000, max_upload_bytes: DEFAULT_MAX_UPLOAD }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub service: ServiceConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig { backbone: BackboneConfig::tiny(), train: TrainConfig::default(), service: ServiceConfig::default() }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig =
            toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_string(), source })?;
        cfg.backbone.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// A preset name or the path of a TOML file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ConfigError> {
        if let Some(backbone) = BackboneConfig::preset(name_or_path) {
            return Ok(AppConfig { backbone, ..Default::default() });
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text, &path.display().to_string())
    }
}
