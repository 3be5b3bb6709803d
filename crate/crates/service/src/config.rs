use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    /// Deterministic rule policy; no network.
    Scripted,
    /// OpenAI-compatible endpoint from REACT_TOD_API_BASE / REACT_TOD_API_KEY.
    Http { model: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Database JSON; the bundled database when unset.
    pub db: Option<PathBuf>,
    pub event_log: PathBuf,
    /// Directory of the web bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    pub backend: BackendSettings,
    /// When false every session talks to the ReAct agent.
    pub baseline: bool,
    /// Fixes goal generation and system assignment, for tests.
    pub seed: Option<u64>,
    pub abandon_after_hours: i64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            db: None,
            event_log: PathBuf::from("events.jsonl"),
            static_dir: None,
            backend: BackendSettings::Scripted,
            baseline: true,
            seed: None,
            abandon_after_hours: 24,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let config: ServiceConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Invalid { path: path.into(), message: e.to_string() })?;
        if config.abandon_after_hours <= 0 {
            return Err(ConfigError::Invalid { path: path.into(), message: "abandon_after_hours must be positive".into() });
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("service.toml");
        std::fs::write(&path, "port = 9000\nbaseline = false\n[backend]\nkind = \"http\"\nmodel = \"gpt-4-32k\"\n").unwrap();
        let c = ServiceConfig::load(&path).unwrap();
        assert_eq!(c.port, 9000);
        assert!(!c.baseline);
        assert_eq!(c.backend, BackendSettings::Http { model: "gpt-4-32k".into() });
        assert_eq!(c.abandon_after_hours, 24);

        std::fs::write(&path, "prot = 1\n").unwrap();
        assert!(matches!(ServiceConfig::load(&path), Err(ConfigError::Invalid { .. })));
    }
}
