//! Gateway configuration file (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "data"
//! suites = ["suites/extra.json"]
//!
//! [tokens]
//! tok-alice = "alice"
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Token to user id.
    #[serde(default)]
    pub tokens: BTreeMap<String, String>,
    #[serde(default)]
    pub suites: Vec<PathBuf>,
}

fn default_listen() -> String {
    DEFAULT_LISTEN.to_string()
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig { listen: default_listen(), data_dir: None, tokens: BTreeMap::new(), suites: Vec::new() }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text)
            .map_err(|e| ConfigError::Invalid { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = &config.data_dir {
            config.data_dir = Some(base.join(dir));
        }
        config.suites = config.suites.iter().map(|s| base.join(s)).collect();
        Ok(config)
    }
}
