//! Log mel spectrograms matching the front-end a pretrained vocoder expects.
//!
//! Magnitude STFT with a periodic Hann window, Slaney-style mel filterbank
//! (area-normalized triangles), natural log of the filterbank output clamped
//! below at `log_clamp`. Defaults follow the widely distributed LJ Speech
//! HiFi-GAN checkpoints.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::dsp::spectral::hann;
use crate::dsp::FrameConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_clamp: f64,
    /// Reflect-pad so frame `t` is centred near sample `t·hop`.
    pub center: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22_050,
            fft_size: 1024,
            hop: 256,
            win_length: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_clamp: 1e-5,
            center: true,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hop > 0
            && self.hop <= self.win_length
            && self.win_length <= self.fft_size
            && self.n_mels > 0
            && self.fmin >= 0.0
            && self.fmin < self.fmax
            && self.fmax <= self.sample_rate as f64 / 2.0
            && self.log_clamp > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("inconsistent mel config {self:?}")))
        }
    }

    pub fn frame_config(&self) -> FrameConfig {
        FrameConfig {
            frame_length: self.fft_size,
            hop: self.hop,
            centered: self.center,
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Content hash over every field; vocoder bundles and checkpoints pin it.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("mel config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }

    /// Value every bin takes for digital silence.
    pub fn floor_value(&self) -> f64 {
        self.log_clamp.ln()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// Dense `n_mels × (fft_size/2 + 1)` mel filterbank.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    /// Centre frequency of each band in Hz, strictly increasing.
    pub centers: Vec<f64>,
    /// Non-zero column range of each row.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig) -> Self {
        let n_bins = config.fft_size / 2 + 1;
        let fft_freqs: Vec<f64> = (0..n_bins)
            .map(|k| k as f64 * config.sample_rate as f64 / config.fft_size as f64)
            .collect();
        let (mel_lo, mel_hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
        let edges: Vec<f64> = (0..config.n_mels + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((config.n_mels, n_bins));
        let mut support = Vec::with_capacity(config.n_mels);
        for m in 0..config.n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (hi - lo);
            let mut first = n_bins;
            let mut last = 0;
            for (k, &f) in fft_freqs.iter().enumerate() {
                let rising = (f - lo) / (mid - lo);
                let falling = (hi - f) / (hi - mid);
                let w = rising.min(falling).max(0.0);
                if w > 0.0 {
                    weights[[m, k]] = w * enorm;
                    first = first.min(k);
                    last = k;
                }
            }
            support.push((first.min(last), last + 1));
        }
        Self {
            weights,
            centers: edges[1..=config.n_mels].to_vec(),
            support,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for (m, slot) in out.iter_mut().enumerate() {
            let (a, b) = self.support[m];
            *slot = (a..b).map(|k| self.weights[[m, k]] * magnitudes[k]).sum();
        }
    }
}

/// Log mel spectrogram, `T × n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub bins: Array2<f64>,
    pub frame_rate: f64,
    /// Fingerprint of the [`MelConfig`] that produced (or is expected to
    /// consume) the spectrogram.
    pub config_id: String,
    /// True when bins are z-scored with [`MelNormalization`].
    pub normalized: bool,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.bins.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(((t, m), _)) = self.bins.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite mel value at frame {t}, band {m}")));
        }
        Ok(())
    }

    /// An all-silence spectrogram for `config`.
    pub fn silence(config: &MelConfig, n_frames: usize) -> Self {
        Self {
            bins: Array2::from_elem((n_frames, config.n_mels), config.floor_value()),
            frame_rate: config.frame_rate(),
            config_id: config.fingerprint(),
            normalized: false,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    const MAGIC: &'static [u8; 6] = b"WBMEL1";

    /// Binary layout: magic, u32 rows, u32 cols, f64 frame rate, u8 normalized,
    /// u16-prefixed config id, then row-major little-endian f64 values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_u32::<LittleEndian>(self.n_frames() as u32)?;
        w.write_u32::<LittleEndian>(self.n_mels() as u32)?;
        w.write_f64::<LittleEndian>(self.frame_rate)?;
        w.write_u8(u8::from(self.normalized))?;
        w.write_u16::<LittleEndian>(self.config_id.len() as u16)?;
        w.write_all(self.config_id.as_bytes())?;
        for v in self.bins.iter() {
            w.write_f64::<LittleEndian>(*v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::InvalidInput("not a mel spectrogram file".into()));
        }
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let frame_rate = r.read_f64::<LittleEndian>()?;
        let normalized = r.read_u8()? != 0;
        let id_len = r.read_u16::<LittleEndian>()? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        Ok(Self {
            bins: Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::ShapeMismatch(e.to_string()))?,
            frame_rate,
            config_id: String::from_utf8(id).map_err(|e| Error::InvalidInput(e.to_string()))?,
            normalized,
        })
    }
}

/// Reusable STFT + filterbank for one [`MelConfig`].
#[derive(Clone)]
pub struct MelExtractor {
    config: MelConfig,
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("config", &self.config).finish_non_exhaustive()
    }
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let mut window = vec![0.0; config.fft_size];
        let offset = (config.fft_size - config.win_length) / 2;
        window[offset..offset + config.win_length].copy_from_slice(&hann(config.win_length, true));
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            filterbank: MelFilterbank::new(&config),
            config,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// STFT magnitudes, `T × (fft_size/2 + 1)`.
    pub fn magnitudes(&self, wave: &Waveform) -> Result<Array2<f64>> {
        if wave.sample_rate() != self.config.sample_rate {
            return Err(Error::InvalidInput(format!(
                "waveform sample rate {} Hz does not match mel config {} Hz",
                wave.sample_rate(),
                self.config.sample_rate
            )));
        }
        let frame_cfg = self.config.frame_config();
        let (signal, n_frames) = frame_cfg.prepare(wave.samples())?;
        let n_fft = self.config.fft_size;
        let n_bins = n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, n_bins));
        let mut buf = vec![Complex::default(); n_fft];
        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let start = t * frame_cfg.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(signal[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = (buf[k].norm_sqr() + 1e-9).sqrt();
            }
        }
        Ok(out)
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let mags = self.magnitudes(wave)?;
        let mut bins = Array2::zeros((mags.nrows(), self.config.n_mels));
        let mut scratch = vec![0.0; self.config.n_mels];
        for (mag_row, mut mel_row) in mags.axis_iter(Axis(0)).zip(bins.axis_iter_mut(Axis(0))) {
            let mag = mag_row.as_slice().expect("contiguous row");
            self.filterbank.apply(mag, &mut scratch);
            for (dst, &e) in mel_row.iter_mut().zip(&scratch) {
                *dst = e.max(self.config.log_clamp).ln();
            }
        }
        Ok(MelSpectrogram {
            bins,
            frame_rate: self.config.frame_rate(),
            config_id: self.config.fingerprint(),
            normalized: false,
        })
    }
}

pub fn compute(wave: &Waveform, config: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(config.clone())?.compute(wave)
}

/// Per-band z-scoring of log mel values, fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelNormalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MelNormalization {
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for mel in mels {
            if mel.normalized {
                return Err(Error::NormalizationState("normalized; fit needs raw log mels"));
            }
            if sum.is_empty() {
                sum = vec![0.0; mel.n_mels()];
                sum_sq = vec![0.0; mel.n_mels()];
            } else if sum.len() != mel.n_mels() {
                return Err(Error::ShapeMismatch("mel band counts differ across corpus".into()));
            }
            for row in mel.bins.rows() {
                count += 1;
                for (m, v) in row.iter().enumerate() {
                    sum[m] += v;
                    sum_sq[m] += v * v;
                }
            }
        }
        if count < 2 {
            return Err(Error::InvalidInput("mel normalization needs at least 2 frames".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt().max(1e-3))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn n_mels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        if mel.normalized {
            return Err(Error::NormalizationState("normalized"));
        }
        self.check(mel)?;
        let mut out = mel.clone();
        for mut row in out.bins.rows_mut() {
            for (m, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[m]) / self.std[m];
            }
        }
        out.normalized = true;
        Ok(out)
    }

    pub fn denormalize(&self, mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        if !mel.normalized {
            return Err(Error::NormalizationState("denormalized"));
        }
        self.check(mel)?;
        let mut out = mel.clone();
        for mut row in out.bins.rows_mut() {
            for (m, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[m] + self.mean[m];
            }
        }
        out.normalized = false;
        Ok(out)
    }

    fn check(&self, mel: &MelSpectrogram) -> Result<()> {
        if mel.n_mels() != self.n_mels() {
            return Err(Error::ShapeMismatch(format!(
                "{} mel bands, normalization has {}",
                mel.n_mels(),
                self.n_mels()
            )));
        }
        Ok(())
    }
}
