//! Installing vocoder bundles: the offline reference bundle, or a HiFi-GAN
//! safetensors blob downloaded and checked against a published SHA-256.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{finalize_golden, sha256_file, HifiGanConfig, Manifest, VocoderBundle, VocoderKind, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::mel::MelConfig;

#[derive(Debug, Clone)]
pub struct HifiGanSource {
    /// `http://`, `https://` or `file://` URL of a safetensors weights file.
    pub url: String,
    pub sha256: String,
    pub name: String,
    pub license: String,
    pub config: HifiGanConfig,
}

impl HifiGanSource {
    pub fn new(url: impl Into<String>, sha256: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            sha256: sha256.into().to_lowercase(),
            name: "hifigan".into(),
            license: "see upstream".into(),
            config: HifiGanConfig::default(),
        }
    }
}

fn download(url: &str, dest: &Path) -> Result<String> {
    let mut file = std::fs::File::create(dest)?;
    let mut hasher = Sha256::new();
    let mut sink = HashingWriter {
        inner: &mut file,
        hasher: &mut hasher,
    };
    if let Some(path) = url.strip_prefix("file://") {
        let mut src = std::fs::File::open(path)?;
        std::io::copy(&mut src, &mut sink)?;
    } else if url.starts_with("http://") || url.starts_with("https://") {
        let response = ureq::get(url)
            .call()
            .map_err(|e| Error::InvalidInput(format!("download of {url} failed: {e}")))?;
        let mut reader = response.into_body().into_reader();
        std::io::copy(&mut reader, &mut sink)?;
    } else {
        return Err(Error::InvalidInput(format!("unsupported URL scheme in {url}")));
    }
    file.flush()?;
    Ok(hex::encode(hasher.finalize()))
}

struct HashingWriter<'a, W> {
    inner: &'a mut W,
    hasher: &'a mut Sha256,
}

impl<W: Write> Write for HashingWriter<'_, W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Downloads, checks and installs a HiFi-GAN bundle at `out`. An existing
/// blob with the expected checksum is reused.
pub fn fetch_hifigan(out: impl AsRef<Path>, source: &HifiGanSource, mel: &MelConfig) -> Result<VocoderBundle> {
    let out = out.as_ref();
    source.config.validate(mel.hop)?;
    std::fs::create_dir_all(out)?;
    let weights = "weights.safetensors";
    let dest = out.join(weights);
    let cached = dest.exists() && sha256_file(&dest)? == source.sha256;
    if !cached {
        let partial: PathBuf = out.join("weights.safetensors.partial");
        let found = download(&source.url, &partial)?;
        if found != source.sha256 {
            std::fs::remove_file(&partial)?;
            return Err(Error::ChecksumMismatch {
                path: PathBuf::from(&source.url),
                expected: source.sha256.clone(),
                found,
            });
        }
        std::fs::rename(&partial, &dest)?;
    }
    let manifest = Manifest {
        name: source.name.clone(),
        kind: VocoderKind::HifiGan,
        version: source.sha256[..12.min(source.sha256.len())].to_string(),
        license: source.license.clone(),
        sample_rate: mel.sample_rate,
        deterministic: true,
        weights: weights.into(),
        weights_sha256: source.sha256.clone(),
        mel: mel.clone(),
        griffin_lim: None,
        hifigan: Some(source.config.clone()),
    };
    manifest.validate()?;
    std::fs::write(out.join(MANIFEST_FILE), toml::to_string_pretty(&manifest)?)?;
    finalize_golden(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocoder::verify_bundle;

    fn small() -> (MelConfig, HifiGanConfig) {
        (
            MelConfig {
                fft_size: 64,
                win_length: 64,
                hop: 16,
                n_mels: 8,
                ..MelConfig::default()
            },
            HifiGanConfig {
                upsample_rates: vec![4, 4],
                upsample_kernel_sizes: vec![8, 8],
                upsample_initial_channel: 8,
                resblock_kernel_sizes: vec![3],
                resblock_dilation_sizes: vec![vec![1, 3]],
            },
        )
    }

    fn published(dir: &Path, cfg: &HifiGanConfig) -> (String, String) {
        let blob = dir.join("upstream.safetensors");
        candle_core::safetensors::save(&cfg.random_weights(8, 1).unwrap(), &blob).unwrap();
        (format!("file://{}", blob.display()), sha256_file(&blob).unwrap())
    }

    #[test]
    fn installs_and_verifies_from_file_url() {
        let tmp = tempfile::tempdir().unwrap();
        let (mel, cfg) = small();
        let (url, sha) = published(tmp.path(), &cfg);
        let source = HifiGanSource {
            config: cfg,
            ..HifiGanSource::new(url, sha)
        };
        let out = tmp.path().join("bundle");
        fetch_hifigan(&out, &source, &mel).unwrap();
        let report = verify_bundle(&out, Some(&mel)).unwrap();
        assert!(report.passed, "{report:?}");
        // second run reuses the blob
        fetch_hifigan(&out, &source, &mel).unwrap();
    }

    #[test]
    fn wrong_checksum_leaves_nothing_behind() {
        let tmp = tempfile::tempdir().unwrap();
        let (mel, cfg) = small();
        let (url, _) = published(tmp.path(), &cfg);
        let source = HifiGanSource {
            config: cfg,
            ..HifiGanSource::new(url, "00".repeat(32))
        };
        let out = tmp.path().join("bundle");
        assert!(matches!(fetch_hifigan(&out, &source, &mel), Err(Error::ChecksumMismatch { .. })));
        assert!(!out.join("weights.safetensors").exists());
        assert!(!out.join("weights.safetensors.partial").exists());
    }
}
