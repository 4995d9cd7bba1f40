//! Framewise extraction of the five speech parameters.
//!
//! Every frame yields F1 and F2 (LPC roots), log-f0 with a voicing decision
//! (normalized autocorrelation), the spectral centroid, and the spectral slope.
//! All five are amplitude-normalized, so scaling the waveform leaves them
//! unchanged.

pub mod correlation;
pub mod lpc;
pub mod pitch;
pub mod spectral;

use std::borrow::Cow;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::track::{Feature, ParameterTrack, TrackMeta, N_FEATURES};

pub use lpc::FormantTracker;
pub use pitch::PitchDetector;

/// Analysis framing shared by the feature extractor and the mel front-end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub frame_length: usize,
    pub hop: usize,
    /// Reflect-pad `(frame_length - hop) / 2` samples on both sides, the
    /// convention of mel front-ends feeding neural vocoders. Gives
    /// `len / hop` frames instead of `1 + (len - frame_length) / hop`.
    pub centered: bool,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_length: 1024,
            hop: 256,
            centered: false,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.frame_length == 0 || self.hop > self.frame_length {
            return Err(Error::InvalidConfig(format!(
                "need 0 < hop ({}) <= frame_length ({})",
                self.hop, self.frame_length
            )));
        }
        Ok(())
    }

    pub fn pad(&self) -> usize {
        if self.centered {
            (self.frame_length - self.hop) / 2
        } else {
            0
        }
    }

    /// Shortest signal that yields one frame.
    pub fn min_samples(&self) -> usize {
        if self.centered {
            // reflection needs more samples than the pad width
            (self.frame_length - 2 * self.pad()).max(self.pad() + 1)
        } else {
            self.frame_length
        }
    }

    pub fn n_frames(&self, n_samples: usize) -> Result<usize> {
        self.validate()?;
        if n_samples < self.min_samples() {
            return Err(Error::TooShort {
                samples: n_samples,
                minimum: self.min_samples(),
            });
        }
        Ok(1 + (n_samples + 2 * self.pad() - self.frame_length) / self.hop)
    }

    pub fn frame_rate(&self, sample_rate: u32) -> f64 {
        sample_rate as f64 / self.hop as f64
    }

    /// The (possibly padded) signal and the number of frames it holds.
    pub fn prepare<'a>(&self, samples: &'a [f64]) -> Result<(Cow<'a, [f64]>, usize)> {
        let n_frames = self.n_frames(samples.len())?;
        let pad = self.pad();
        if pad == 0 {
            return Ok((Cow::Borrowed(samples), n_frames));
        }
        let n = samples.len();
        let mut padded = Vec::with_capacity(n + 2 * pad);
        padded.extend((1..=pad).rev().map(|i| samples[i]));
        padded.extend_from_slice(samples);
        padded.extend((0..pad).map(|i| samples[n - 2 - i]));
        Ok((Cow::Owned(padded), n_frames))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub frame: FrameConfig,
    pub pitch: PitchDetector,
    pub formants: FormantTracker,
    /// Log-f0 used for every frame of an utterance with no voiced frame,
    /// normally the corpus median.
    pub fallback_log_f0: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            pitch: PitchDetector::default(),
            formants: FormantTracker::default(),
            fallback_log_f0: 200f64.ln(),
        }
    }
}

impl ExtractOptions {
    pub fn with_frame(frame: FrameConfig) -> Self {
        Self {
            frame,
            ..Self::default()
        }
    }
}

/// Default formant values for leading frames that never saw a valid LPC fit.
const NEUTRAL_FORMANTS: (f64, f64) = (500.0, 1500.0);

pub fn extract_parameters(wave: &Waveform, options: &ExtractOptions) -> Result<ParameterTrack> {
    let sr = wave.sample_rate();
    let frame_cfg = options.frame;
    let (signal, n_frames) = frame_cfg.prepare(wave.samples())?;
    let len = frame_cfg.frame_length;

    let mut spectrum = spectral::MagnitudeSpectrum::new(len);
    let lpc_window = spectral::hamming(len);

    let mut values = Array2::<f64>::zeros((n_frames, N_FEATURES));
    let mut voicing = vec![false; n_frames];
    let mut f0 = vec![None; n_frames];
    let mut formants: Vec<Option<(f64, f64)>> = vec![None; n_frames];

    for t in 0..n_frames {
        let start = t * frame_cfg.hop;
        let frame = &signal[start..start + len];

        let pitch = options.pitch.detect(frame, sr);
        voicing[t] = pitch.f0_hz.is_some();
        f0[t] = pitch.f0_hz.map(f64::ln);

        formants[t] = options.formants.formants(frame, sr, &lpc_window);

        let mags = spectrum.compute(frame);
        values[[t, Feature::Centroid.index()]] = spectral::spectral_centroid(&mags, spectrum.n_fft(), sr);
        values[[t, Feature::Slope.index()]] = spectral::spectral_slope(&mags, spectrum.n_fft(), sr);
    }

    let (f1, f2) = hold_formants(&formants);
    for t in 0..n_frames {
        values[[t, Feature::F1.index()]] = f1[t];
        values[[t, Feature::F2.index()]] = f2[t];
    }

    let (log_f0, fallback) = match interpolate_unvoiced(&f0) {
        Some(filled) => (filled, false),
        None => (vec![options.fallback_log_f0; n_frames], true),
    };
    for (t, v) in log_f0.into_iter().enumerate() {
        values[[t, Feature::F0.index()]] = v;
    }

    ParameterTrack::new(
        values,
        voicing,
        frame_cfg.frame_rate(sr),
        false,
        TrackMeta {
            sample_rate: sr,
            stats_id: None,
            f0_fallback: fallback,
        },
    )
}

/// Frames without two formant candidates reuse the previous frame's values;
/// leading gaps take the first valid frame's values.
fn hold_formants(frames: &[Option<(f64, f64)>]) -> (Vec<f64>, Vec<f64>) {
    let first = frames.iter().flatten().next().copied().unwrap_or(NEUTRAL_FORMANTS);
    let mut last = first;
    frames
        .iter()
        .map(|f| {
            if let Some(v) = f {
                last = *v;
            }
            last
        })
        .unzip()
}

/// Linear interpolation across unvoiced gaps, edges held at the nearest
/// voiced value. `None` when nothing is voiced.
pub fn interpolate_unvoiced(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; values.len()];
    out[..=first_i].iter_mut().for_each(|v| *v = first_v);
    out[last_i..].iter_mut().for_each(|v| *v = last_v);
    for pair in known.windows(2) {
        let ((i0, v0), (i1, v1)) = (pair[0], pair[1]);
        let span = (i1 - i0) as f64;
        for (k, slot) in out[i0..=i1].iter_mut().enumerate() {
            let w = k as f64 / span;
            *slot = v0 + w * (v1 - v0);
        }
    }
    Some(out)
}

/// Median voiced log-f0 over a corpus, the usual fallback for all-unvoiced
/// utterances.
pub fn corpus_median_log_f0<'a>(tracks: impl IntoIterator<Item = &'a ParameterTrack>) -> Option<f64> {
    let mut voiced: Vec<f64> = tracks
        .into_iter()
        .flat_map(|t| {
            t.column(Feature::F0)
                .iter()
                .zip(t.voicing())
                .filter(|(_, &v)| v)
                .map(|(f, _)| *f)
                .collect::<Vec<_>>()
        })
        .collect();
    crate::track::median(&mut voiced)
}
