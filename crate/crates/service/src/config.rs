use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wavebender::trainer::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    /// Longest accepted upload, in seconds of audio.
    pub upload_limit: f64,
    /// Idle seconds before a session is dropped.
    pub session_ttl: u64,
    pub request_timeout: u64,
    pub cors_origins: Vec<String>,
    pub max_renders_per_session: usize,
    /// Sessions are mirrored here when set, so they survive a restart.
    pub session_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            upload_limit: 60.0,
            session_ttl: 1800,
            request_timeout: 120,
            cors_origins: vec!["http://localhost:5173".into()],
            max_renders_per_session: 20,
            session_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Training output directory or a single checkpoint directory.
    pub checkpoint: Option<PathBuf>,
    pub vocoder: Option<PathBuf>,
    /// Directory holding `f1/` and `f2/` coupling predictors.
    pub coupling: Option<PathBuf>,
}

/// Project file: `[training]`, `[service]` and `[paths]` sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    pub training: TrainingConfig,
    pub service: ServiceConfig,
    pub paths: Paths,
}

impl ProjectConfig {
    pub fn load(path: impl AsRef<Path>) -> wavebender::Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> wavebender::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}
