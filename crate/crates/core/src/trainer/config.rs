use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::mel::MelConfig;
use crate::nn::optim::AdamConfig;
use crate::nn::{GanConfig, WavebenderNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub corpus_path: Option<PathBuf>,
    /// Use only the first `n` utterances (by id) of the corpus.
    pub max_utterances: Option<usize>,
    pub split_fraction: f64,
    pub split_seed: u64,
    /// Root of every other random stream (initialization, shuffling, crops,
    /// GAN noise).
    pub seed: u64,
    pub pretrain_epochs: u64,
    pub joint_epochs: u64,
    pub adam: AdamConfig,
    pub base_lr: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub precision: Precision,
    /// Keep this many `ckpt/{step}` directories (oldest removed first).
    pub keep_checkpoints: usize,
    /// Optional directory for re-extracted augmented examples.
    pub augment_cache: Option<PathBuf>,
    pub augmentation: AugmentationPolicy,
    pub mel: MelConfig,
    pub net: WavebenderNetConfig,
    pub gan: GanConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            corpus_path: None,
            max_utterances: None,
            split_fraction: 0.95,
            split_seed: 0,
            seed: 0,
            pretrain_epochs: 20,
            joint_epochs: 10,
            adam: AdamConfig::default(),
            base_lr: 2e-4,
            batch_size: 4,
            crop_frames: 192,
            precision: Precision::F32,
            keep_checkpoints: 3,
            augment_cache: None,
            augmentation: AugmentationPolicy::default(),
            mel: MelConfig::default(),
            net: WavebenderNetConfig::default(),
            gan: GanConfig::default(),
        }
    }
}

impl TrainingConfig {
    /// Reduced widths for single-core desk runs: same depth, skips and
    /// schedule, narrower channels.
    pub fn desk() -> Self {
        Self {
            base_lr: 1e-3,
            net: WavebenderNetConfig {
                widths: vec![32, 64, 128, 128, 128, 128, 64, 80],
                ..WavebenderNetConfig::default()
            },
            gan: GanConfig {
                gen_channels: 16,
                disc_channels: 16,
                ..GanConfig::default()
            },
            ..Self::default()
        }
    }

    /// Two-block, eight-channel network and two-layer GAN for smoke tests.
    pub fn tiny() -> Self {
        Self {
            base_lr: 3e-3,
            net: WavebenderNetConfig {
                widths: vec![16, 80],
                kernel_size: 5,
                groups: 4,
                ..WavebenderNetConfig::tiny(80)
            },
            gan: GanConfig {
                gen_layers: 2,
                gen_channels: 4,
                disc_layers: 3,
                disc_channels: 4,
                ..GanConfig::default()
            },
            augmentation: AugmentationPolicy::disabled(),
            ..Self::default()
        }
    }

    pub fn total_epochs(&self) -> u64 {
        self.pretrain_epochs + self.joint_epochs
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split fraction {} outside (0, 1)", self.split_fraction));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base learning rate {} must be positive", self.base_lr));
        }
        if self.batch_size == 0 || self.crop_frames == 0 {
            return bad("batch size and crop length must be positive".into());
        }
        if self.net.out_channels() != self.mel.n_mels {
            return bad(format!(
                "network outputs {} channels but the mel front-end has {} bands",
                self.net.out_channels(),
                self.mel.n_mels
            ));
        }
        self.adam.validate()?;
        self.augmentation.validate()?;
        self.mel.validate()?;
        self.net.validate()?;
        self.gan.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [TrainingConfig::default(), TrainingConfig::desk(), TrainingConfig::tiny()] {
            cfg.validate().unwrap();
            let text = toml::to_string_pretty(&cfg).unwrap();
            assert_eq!(toml::from_str::<TrainingConfig>(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg: TrainingConfig = toml::from_str("pretrain_epochs = 3\n[gan]\nnoise_std = 0.0\n").unwrap();
        assert_eq!(cfg.pretrain_epochs, 3);
        assert_eq!(cfg.joint_epochs, 10);
        assert_eq!(cfg.gan.noise_std, 0.0);
        assert_eq!(cfg.gan.gen_layers, 6);
    }

    #[test]
    fn rejects_mismatched_output_width() {
        let mut cfg = TrainingConfig::tiny();
        cfg.mel.n_mels = 64;
        assert!(cfg.validate().is_err());
    }
}
