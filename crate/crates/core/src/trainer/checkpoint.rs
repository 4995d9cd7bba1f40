//! Checkpoint directories: weights, optimizer moments, normalization
//! statistics and training state.
//!
//! ```text
//! checkpoint.json        counters, configs, fingerprints, metric history
//! stats.toml             feature normalization statistics
//! weights.safetensors    net.*, gen.*, disc.* parameters
//! optimizer.safetensors  Adam moments keyed by parameter name
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::metrics::EpochRecord;
use crate::error::{Error, Result};
use crate::mel::MelNormalization;
use crate::norm::NormalizationStats;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "checkpoint.json";
pub const STATS_FILE: &str = "stats.toml";
pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: usize,
    pub config: TrainingConfig,
    pub net_fingerprint: String,
    pub mel_fingerprint: String,
    pub stats_id: String,
    pub mel_norm: MelNormalization,
    pub fallback_log_f0: f64,
    pub optimizer_steps: BTreeMap<String, u64>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub best_val: Option<f64>,
    pub disc_collapse_run: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub stats: NormalizationStats,
    pub weights: HashMap<String, Tensor>,
    pub optimizer: HashMap<String, Tensor>,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        self.stats.save(dir.join(STATS_FILE))?;
        candle_core::safetensors::save(&self.weights, dir.join(WEIGHTS_FILE))?;
        candle_core::safetensors::save(&self.optimizer, dir.join(OPTIMIZER_FILE))?;
        Ok(())
    }

    /// Loads and cross-checks the stored fingerprints.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta = read_meta(dir)?;
        let stats = NormalizationStats::load(dir.join(STATS_FILE))?;
        if stats.id() != meta.stats_id {
            return Err(Error::FingerprintMismatch {
                expected: meta.stats_id.clone(),
                found: stats.id(),
            });
        }
        let optimizer_path = dir.join(OPTIMIZER_FILE);
        let optimizer = if optimizer_path.exists() {
            candle_core::safetensors::load(optimizer_path, &Device::Cpu)?
        } else {
            HashMap::new()
        };
        Ok(Self {
            weights: candle_core::safetensors::load(dir.join(WEIGHTS_FILE), &Device::Cpu)?,
            optimizer,
            meta,
            stats,
        })
    }
}

/// Checkpoint directory for `path`: the directory itself when it holds a
/// checkpoint, else its `best/`, else the highest-step `ckpt/{step}/`.
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join(META_FILE).exists() {
        return Ok(path.to_path_buf());
    }
    if path.join("best").join(META_FILE).exists() {
        return Ok(path.join("best"));
    }
    let latest = std::fs::read_dir(path.join("ckpt"))
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter_map(|e| Some((e.file_name().to_str()?.parse::<u64>().ok()?, e.path())))
        .filter(|(_, p)| p.join(META_FILE).exists())
        .max_by_key(|(step, _)| *step);
    latest
        .map(|(_, p)| p)
        .ok_or_else(|| Error::InvalidInput(format!("no checkpoint found under {}", path.display())))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Err(Error::InvalidInput(format!("{} is not a checkpoint (no {META_FILE})", dir.display())));
    }
    let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
            meta.format_version
        )));
    }
    let net_fp = meta.config.net.fingerprint();
    if net_fp != meta.net_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: meta.net_fingerprint.clone(),
            found: net_fp,
        });
    }
    Ok(meta)
}
