//! Vocoder bundles: a directory holding a weights blob, a manifest that pins
//! the mel front-end the model expects, and golden test vectors.
//!
//! ```text
//! manifest.toml
//! weights.safetensors
//! golden/input.mel     8-frame log mel spectrogram
//! golden/output.wav    expected audio for that input
//! ```
//!
//! Two engines are supported: HiFi-GAN generators run natively, and a
//! Griffin-Lim reference engine whose weights are the pseudo-inverse of the
//! mel filterbank.

pub mod fetch;
pub mod griffin_lim;
pub mod hifigan;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{rms, Waveform};
use crate::error::{Error, Result};
use crate::mel::{MelConfig, MelSpectrogram};

pub use griffin_lim::{GriffinLim, GriffinLimConfig};
pub use hifigan::{HifiGan, HifiGanConfig};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const GOLDEN_INPUT: &str = "golden/input.mel";
pub const GOLDEN_OUTPUT: &str = "golden/output.wav";
pub const GOLDEN_FRAMES: usize = 8;
pub const GOLDEN_TOLERANCE: f64 = 1e-3;
/// Environment variable consulted when no bundle path is given.
pub const BUNDLE_ENV: &str = "WAVEBENDER_VOCODER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocoderKind {
    HifiGan,
    GriffinLim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub kind: VocoderKind,
    pub version: String,
    pub license: String,
    pub sample_rate: u32,
    /// False when repeated synthesis of the same input may differ.
    pub deterministic: bool,
    pub weights: String,
    pub weights_sha256: String,
    pub mel: MelConfig,
    pub griffin_lim: Option<GriffinLimConfig>,
    pub hifigan: Option<HifiGanConfig>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if self.mel.sample_rate != self.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "manifest sample rate {} differs from its mel config ({})",
                self.sample_rate, self.mel.sample_rate
            )));
        }
        match self.kind {
            VocoderKind::GriffinLim if self.griffin_lim.is_none() => {
                Err(Error::InvalidConfig("griffin_lim bundle lacks a [griffin_lim] section".into()))
            }
            VocoderKind::HifiGan => {
                let cfg = self
                    .hifigan
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("hifigan bundle lacks a [hifigan] section".into()))?;
                cfg.validate(self.mel.hop)
            }
            _ => Ok(()),
        }
    }
}

/// Audio renderer for log mel spectrograms.
pub trait Vocoder: Send + Sync {
    fn mel_config(&self) -> &MelConfig;

    /// Engine-specific rendering, without checks or clamping.
    fn render(&self, mel: &MelSpectrogram) -> Result<Vec<f64>>;

    /// Checked synthesis: the spectrogram must come from this vocoder's
    /// front-end; output is `T·hop` samples clamped to `[-1, 1]`.
    fn synthesize(&self, mel: &MelSpectrogram) -> Result<Waveform> {
        let cfg = self.mel_config();
        let expected = cfg.fingerprint();
        if mel.config_id != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: mel.config_id.clone(),
            });
        }
        if mel.normalized {
            return Err(Error::NormalizationState("normalized; the vocoder needs raw log mels"));
        }
        if mel.n_mels() != cfg.n_mels || mel.n_frames() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "vocoder expects T x {} mels, got {} x {}",
                cfg.n_mels,
                mel.n_frames(),
                mel.n_mels()
            )));
        }
        mel.check_finite()?;
        let mut samples = self.render(mel)?;
        samples.resize(mel.n_frames() * cfg.hop, 0.0);
        for s in &mut samples {
            *s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
        }
        Waveform::new(samples, cfg.sample_rate)
    }
}

#[derive(Debug)]
enum Engine {
    GriffinLim(GriffinLim),
    HifiGan(HifiGan),
}

/// A loaded, checksum-verified bundle. Read-only after load.
#[derive(Debug)]
pub struct VocoderBundle {
    dir: PathBuf,
    manifest: Manifest,
    engine: Engine,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn missing(path: &Path, what: &str) -> Error {
    Error::MissingBundle {
        path: path.to_path_buf(),
        hint: format!(
            "{what}. Create the offline reference bundle with `wavebender fetch-vocoder --reference --out {0}` \
             or download a HiFi-GAN bundle with `wavebender fetch-vocoder --url <URL> --sha256 <HEX> --out {0}`, \
             then pass --vocoder or set {BUNDLE_ENV}",
            path.display()
        ),
    }
}

impl VocoderBundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(missing(dir, "directory does not exist"));
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(missing(dir, "no manifest.toml"));
        }
        let manifest: Manifest = toml::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        manifest.validate()?;
        let weights_path = dir.join(&manifest.weights);
        if !weights_path.exists() {
            return Err(missing(dir, &format!("weights file {} is missing", manifest.weights)));
        }
        let found = sha256_file(&weights_path)?;
        if found != manifest.weights_sha256 {
            return Err(Error::ChecksumMismatch {
                path: weights_path,
                expected: manifest.weights_sha256.clone(),
                found,
            });
        }
        let tensors = candle_core::safetensors::load(&weights_path, &candle_core::Device::Cpu)?;
        let engine = match manifest.kind {
            VocoderKind::GriffinLim => Engine::GriffinLim(GriffinLim::from_tensors(
                manifest.mel.clone(),
                manifest.griffin_lim.clone().expect("validated"),
                &tensors,
            )?),
            VocoderKind::HifiGan => Engine::HifiGan(HifiGan::from_tensors(
                manifest.mel.clone(),
                manifest.hifigan.clone().expect("validated"),
                &tensors,
            )?),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            engine,
        })
    }

    /// Bundle at `path`, or at `$WAVEBENDER_VOCODER` when `path` is `None`.
    pub fn locate(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(BUNDLE_ENV) {
                Some(p) => Self::load(PathBuf::from(p)),
                None => Err(missing(Path::new("<unset>"), &format!("no bundle path given and {BUNDLE_ENV} is unset"))),
            },
        }
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn fingerprint(&self) -> String {
        self.manifest.mel.fingerprint()
    }

    /// Rejects a project mel front-end that differs from the bundle's.
    pub fn check_mel_config(&self, project: &MelConfig) -> Result<()> {
        let (expected, found) = (self.manifest.mel.fingerprint(), project.fingerprint());
        if expected != found {
            return Err(Error::FingerprintMismatch { expected, found });
        }
        Ok(())
    }
}

impl Vocoder for VocoderBundle {
    fn mel_config(&self) -> &MelConfig {
        &self.manifest.mel
    }

    fn render(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        match &self.engine {
            Engine::GriffinLim(gl) => gl.render(mel),
            Engine::HifiGan(h) => h.render(mel),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub name: String,
    pub kind: VocoderKind,
    pub weights_sha256: String,
    pub mel_fingerprint: String,
    pub golden_rms_error: f64,
    pub golden_peak: f64,
    pub passed: bool,
}

/// Checksums, manifest validation, optional project front-end comparison,
/// and a golden-vector inference run.
pub fn verify_bundle(dir: impl AsRef<Path>, project_mel: Option<&MelConfig>) -> Result<VerifyReport> {
    let bundle = VocoderBundle::load(dir.as_ref())?;
    if let Some(cfg) = project_mel {
        bundle.check_mel_config(cfg)?;
    }
    let input = MelSpectrogram::load(dir.as_ref().join(GOLDEN_INPUT))?;
    let expected = Waveform::read_wav(dir.as_ref().join(GOLDEN_OUTPUT))?;
    let got = bundle.synthesize(&input)?;
    if got.len() != expected.len() {
        return Err(Error::ShapeMismatch(format!(
            "golden output has {} samples, inference produced {}",
            expected.len(),
            got.len()
        )));
    }
    let diff: Vec<f64> = got.samples().iter().zip(expected.samples()).map(|(a, b)| a - b).collect();
    let err = rms(&diff);
    Ok(VerifyReport {
        name: bundle.manifest.name.clone(),
        kind: bundle.manifest.kind,
        weights_sha256: bundle.manifest.weights_sha256.clone(),
        mel_fingerprint: bundle.fingerprint(),
        golden_rms_error: err,
        golden_peak: got.peak(),
        passed: err <= GOLDEN_TOLERANCE,
    })
}

/// Deterministic 8-frame golden input: a 220 Hz harmonic tone through the
/// bundle's own front-end.
pub fn golden_input(mel: &MelConfig) -> Result<MelSpectrogram> {
    let sr = mel.sample_rate as f64;
    let n = GOLDEN_FRAMES * mel.hop;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            (1..=6).map(|k| 0.3 / k as f64 * (2.0 * std::f64::consts::PI * 220.0 * k as f64 * t).sin()).sum()
        })
        .collect();
    let spec = crate::mel::compute(&Waveform::new(samples, mel.sample_rate)?, mel)?;
    Ok(spec)
}

/// Writes weights, manifest (with checksum) and golden vectors, producing a
/// loadable bundle.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    mut manifest: Manifest,
    weights: &std::collections::HashMap<String, candle_core::Tensor>,
) -> Result<VocoderBundle> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("golden"))?;
    let weights_path = dir.join(&manifest.weights);
    candle_core::safetensors::save(weights, &weights_path)?;
    manifest.weights_sha256 = sha256_file(&weights_path)?;
    manifest.validate()?;
    std::fs::write(dir.join(MANIFEST_FILE), toml::to_string_pretty(&manifest)?)?;
    finalize_golden(dir)
}

/// Recomputes the golden vectors of an existing bundle from its weights.
pub fn finalize_golden(dir: &Path) -> Result<VocoderBundle> {
    std::fs::create_dir_all(dir.join("golden"))?;
    let bundle = VocoderBundle::load(dir)?;
    let input = golden_input(&bundle.manifest.mel)?;
    input.save(dir.join(GOLDEN_INPUT))?;
    bundle.synthesize(&input)?.write_wav(dir.join(GOLDEN_OUTPUT))?;
    Ok(bundle)
}

/// Offline Griffin-Lim bundle for `mel`.
pub fn create_reference_bundle(dir: impl AsRef<Path>, mel: &MelConfig) -> Result<VocoderBundle> {
    let gl = GriffinLimConfig::default();
    let weights = GriffinLim::weights(mel)?;
    let manifest = Manifest {
        name: "griffin-lim-reference".into(),
        kind: VocoderKind::GriffinLim,
        version: "1".into(),
        license: "Apache-2.0 (generated locally from the mel filterbank)".into(),
        sample_rate: mel.sample_rate,
        deterministic: true,
        weights: "weights.safetensors".into(),
        weights_sha256: String::new(),
        mel: mel.clone(),
        griffin_lim: Some(gl),
        hifigan: None,
    };
    write_bundle(dir, manifest, &weights)
}
