//! A trained parameters-to-mel model ready for inference.

use std::collections::HashMap;
use std::path::Path;

use candle_core::Tensor;
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::dsp::{extract_parameters, ExtractOptions};
use crate::error::{Error, Result, StageExt};
use crate::mel::{MelConfig, MelNormalization, MelSpectrogram};
use crate::nn::{GanConfig, Generator, ParamStore, WavebenderNet, WavebenderNetConfig};
use crate::norm::NormalizationStats;
use crate::track::ParameterTrack;
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::TrainingConfig;

/// Network, generator and every normalizer they were trained with.
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct WavebenderModel {
    pub mel_config: MelConfig,
    pub net_config: WavebenderNetConfig,
    pub gan_config: GanConfig,
    pub stats: NormalizationStats,
    pub mel_norm: MelNormalization,
    pub fallback_log_f0: f64,
    net: WavebenderNet,
    generator: Generator,
    store: ParamStore,
}

impl WavebenderModel {
    pub fn from_tensors(
        config: &TrainingConfig,
        stats: NormalizationStats,
        mel_norm: MelNormalization,
        fallback_log_f0: f64,
        tensors: &HashMap<String, Tensor>,
    ) -> Result<Self> {
        let mut store = ParamStore::new(config.precision.dtype(), config.seed);
        let net = WavebenderNet::new(config.net.clone(), &mut store, "net")?;
        let generator = Generator::new(&config.gan, &mut store, "gen")?;
        store.load_tensors(tensors)?;
        if mel_norm.n_mels() != config.mel.n_mels {
            return Err(Error::ShapeMismatch("mel normalization does not match the mel config".into()));
        }
        Ok(Self {
            mel_config: config.mel.clone(),
            net_config: config.net.clone(),
            gan_config: config.gan.clone(),
            stats,
            mel_norm,
            fallback_log_f0,
            net,
            generator,
            store,
        })
    }

    /// Untrained weights drawn from the config seed. Useful for plumbing
    /// checks; the audio is not speech.
    pub fn initialized(
        config: &TrainingConfig,
        stats: NormalizationStats,
        mel_norm: MelNormalization,
        fallback_log_f0: f64,
    ) -> Result<Self> {
        let mut store = ParamStore::new(config.precision.dtype(), config.seed);
        WavebenderNet::new(config.net.clone(), &mut store, "net")?;
        Generator::new(&config.gan, &mut store, "gen")?;
        Self::from_tensors(config, stats, mel_norm, fallback_log_f0, &store.to_tensors()?)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let ckpt = Checkpoint::load(dir.as_ref()).stage("load checkpoint")?;
        Self::from_tensors(
            &ckpt.meta.config,
            ckpt.stats,
            ckpt.meta.mel_norm,
            ckpt.meta.fallback_log_f0,
            &ckpt.weights,
        )
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_parameters()
    }

    /// Combined identity of the network, normalization and mel front-end.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.net_config.fingerprint());
        h.update(self.stats.id());
        h.update(self.mel_config.fingerprint());
        for (name, values) in self.store.snapshot().expect("parameters are readable") {
            h.update(name.as_bytes());
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Rejects a mel front-end other than the one the model was trained on.
    pub fn check_mel_config(&self, other: &MelConfig) -> Result<()> {
        let (expected, found) = (self.mel_config.fingerprint(), other.fingerprint());
        if expected != found {
            return Err(Error::FingerprintMismatch { expected, found });
        }
        Ok(())
    }

    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            fallback_log_f0: self.fallback_log_f0,
            ..ExtractOptions::with_frame(self.mel_config.frame_config())
        }
    }

    /// Parameters of `wave` with the framing the model was trained on.
    pub fn analyse(&self, wave: &Waveform) -> Result<ParameterTrack> {
        if wave.sample_rate() != self.mel_config.sample_rate {
            return Err(Error::InvalidInput(format!(
                "audio is {} Hz, the model expects {} Hz",
                wave.sample_rate(),
                self.mel_config.sample_rate
            )));
        }
        extract_parameters(wave, &self.extract_options())
    }

    /// Log mel spectrogram for a denormalized track. With `enhance`, the
    /// generator refines the network output using noise keyed by `noise_seed`.
    pub fn predict_mel(&self, track: &ParameterTrack, enhance: bool, noise_seed: u64) -> Result<MelSpectrogram> {
        let normalized = self.stats.normalize(track).stage("normalize")?;
        let mut mel = self.net.forward(&normalized).stage("wavebender net")?;
        mel.frame_rate = self.mel_config.frame_rate();
        if enhance {
            mel = self.generator.enhance(&mel, noise_seed).stage("enhance")?;
        }
        let mut out = self.mel_norm.denormalize(&mel)?;
        out.config_id = self.mel_config.fingerprint();
        out.check_finite().stage("predict mel")?;
        Ok(out)
    }
}
