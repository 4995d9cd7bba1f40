//! Training-data augmentation by utterance-level pitch scaling and gain
//! change, followed by re-extraction of every parameter from the modified
//! audio.

use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::dsp::pitch::PitchDetector;
use crate::dsp::{extract_parameters, ExtractOptions, FrameConfig};
use crate::error::{Error, Result};
use crate::mel::{MelExtractor, MelSpectrogram};
use crate::seed::rng_for;
use crate::track::ParameterTrack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub f0_scale_range: [f64; 2],
    pub gain_db_range: [f64; 2],
    pub augment_probability: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            f0_scale_range: [0.7, 1.3],
            gain_db_range: [-12.0, 6.0],
            augment_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self {
            augment_probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [f_lo, f_hi] = self.f0_scale_range;
        let [g_lo, g_hi] = self.gain_db_range;
        if !(f_lo > 0.0 && f_lo <= f_hi && f_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("f0 scale range {:?} must be ordered and positive", self.f0_scale_range)));
        }
        if !(g_lo <= g_hi && g_lo.is_finite() && g_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("gain range {:?} must be ordered", self.gain_db_range)));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::InvalidConfig(format!(
                "augment probability {} outside [0, 1]",
                self.augment_probability
            )));
        }
        Ok(())
    }

    /// The draw for one utterance in one epoch. Depends only on the policy
    /// seed and the labels, never on iteration order.
    pub fn draw(&self, utterance_id: &str, epoch: u64) -> AugmentDraw {
        let mut rng = rng_for(self.seed, &[&"augment", &utterance_id, &epoch]);
        let apply = rng.gen::<f64>() < self.augment_probability;
        let f0_scale = sample_range(&mut rng, self.f0_scale_range);
        let gain_db = sample_range(&mut rng, self.gain_db_range);
        if apply {
            AugmentDraw { f0_scale, gain_db }
        } else {
            AugmentDraw::IDENTITY
        }
    }
}

fn sample_range(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub f0_scale: f64,
    pub gain_db: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        f0_scale: 1.0,
        gain_db: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.f0_scale.to_le_bytes());
        h.update(self.gain_db.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub wave: Waveform,
    pub track: ParameterTrack,
    /// Set when pitch shifting failed and the original audio was used.
    pub fell_back: bool,
}

/// Applies `draw` to `wave` and re-extracts parameters from the result.
pub fn augment(wave: &Waveform, draw: AugmentDraw, options: &ExtractOptions) -> Result<Augmented> {
    let mut fell_back = false;
    let shifted = if draw.f0_scale == 1.0 {
        wave.clone()
    } else {
        match pitch_shift(wave, draw.f0_scale, &options.pitch) {
            Ok(w) => w,
            Err(e) => {
                warn!("pitch shift by {} failed ({e}); using the unshifted utterance", draw.f0_scale);
                fell_back = true;
                wave.clone()
            }
        }
    };
    let out = apply_gain(&shifted, draw.gain_db);
    let track = extract_parameters(&out, options)?;
    Ok(Augmented {
        wave: out,
        track,
        fell_back,
    })
}

/// Gain in dB, reduced if needed to keep the peak at or below 0.99.
pub fn apply_gain(wave: &Waveform, gain_db: f64) -> Waveform {
    if gain_db == 0.0 {
        return wave.clone();
    }
    let mut gain = 10f64.powf(gain_db / 20.0);
    let peak = wave.peak();
    if peak * gain > 0.99 && peak > 0.0 {
        gain = 0.99 / peak;
    }
    wave.scaled(gain)
}

#[derive(Debug, Clone, Copy)]
struct Mark {
    pos: usize,
    period: usize,
    voiced: bool,
}

/// Pitch-synchronous overlap-add pitch shift by `scale`, keeping duration
/// and spectral envelope.
pub fn pitch_shift(wave: &Waveform, scale: f64, detector: &PitchDetector) -> Result<Waveform> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("pitch scale {scale} must be positive")));
    }
    let sr = wave.sample_rate();
    let x = wave.samples();
    let n = x.len();
    let frame = FrameConfig {
        frame_length: 1024,
        hop: 128,
        centered: true,
    };
    let (signal, n_frames) = frame.prepare(x)?;
    let f0: Vec<Option<f64>> = (0..n_frames)
        .map(|t| detector.detect(&signal[t * frame.hop..t * frame.hop + frame.frame_length], sr).f0_hz)
        .collect();
    if f0.iter().all(Option::is_none) {
        return Ok(wave.clone());
    }

    let unvoiced_period = (0.01 * sr as f64).round() as usize;
    let mut marks = Vec::new();
    let mut pos = 0usize;
    while pos < n {
        let t = ((pos as f64 / frame.hop as f64).round() as usize).min(n_frames - 1);
        let mark = match f0[t] {
            Some(hz) => Mark {
                pos,
                period: ((sr as f64 / hz).round() as usize).max(2),
                voiced: true,
            },
            None => Mark {
                pos,
                period: unvoiced_period,
                voiced: false,
            },
        };
        marks.push(mark);
        pos += mark.period;
    }

    let mut acc = vec![0.0; n];
    let mut weight = vec![0.0; n];
    let mut ts = 0.0f64;
    let mut cursor = 0usize;
    while (ts as usize) < n {
        let target = ts.round() as usize;
        while cursor + 1 < marks.len() && marks[cursor + 1].pos.abs_diff(target) <= marks[cursor].pos.abs_diff(target) {
            cursor += 1;
        }
        let mark = marks[cursor];
        let half = mark.period as isize;
        for k in -half..=half {
            let src = mark.pos as isize + k;
            let dst = target as isize + k;
            if src < 0 || dst < 0 || src as usize >= n || dst as usize >= n {
                continue;
            }
            let w = 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / half as f64).cos());
            acc[dst as usize] += w * x[src as usize];
            weight[dst as usize] += w;
        }
        ts += if mark.voiced { mark.period as f64 / scale } else { mark.period as f64 };
    }
    let out: Vec<f64> = acc
        .iter()
        .zip(&weight)
        .map(|(a, w)| if *w > 1e-3 { a / w } else { *a })
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pitch shift produced non-finite samples".into()));
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let limited = if peak > 0.99 { out.iter().map(|v| v * 0.99 / peak).collect() } else { out };
    Waveform::new(limited, sr)
}

/// On-disk store of augmented examples keyed by utterance id and draw.
#[derive(Debug, Clone)]
pub struct AugmentCache {
    dir: PathBuf,
}

impl AugmentCache {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self> {
        std::fs::create_dir_all(dir.as_ref())?;
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
        })
    }

    fn stem(&self, utterance_id: &str, draw: &AugmentDraw) -> PathBuf {
        self.dir.join(format!("{utterance_id}__{}", draw.fingerprint()))
    }

    pub fn get(&self, utterance_id: &str, draw: &AugmentDraw) -> Result<Option<(ParameterTrack, MelSpectrogram)>> {
        let stem = self.stem(utterance_id, draw);
        let (csv, mel) = (stem.with_extension("csv"), stem.with_extension("mel"));
        if !(csv.exists() && mel.exists()) {
            return Ok(None);
        }
        Ok(Some((ParameterTrack::read_csv(&csv)?, MelSpectrogram::load(&mel)?)))
    }

    pub fn put(&self, utterance_id: &str, draw: &AugmentDraw, track: &ParameterTrack, mel: &MelSpectrogram) -> Result<()> {
        let stem = self.stem(utterance_id, draw);
        track.write_csv(stem.with_extension("csv"))?;
        mel.save(stem.with_extension("mel"))
    }

    /// Cached lookup, computing and storing on a miss.
    pub fn get_or_compute(
        &self,
        utterance_id: &str,
        wave: &Waveform,
        draw: AugmentDraw,
        options: &ExtractOptions,
        mel: &MelExtractor,
    ) -> Result<(ParameterTrack, MelSpectrogram)> {
        if let Some(hit) = self.get(utterance_id, &draw)? {
            return Ok(hit);
        }
        let aug = augment(wave, draw, options)?;
        let spec = mel.compute(&aug.wave)?;
        self.put(utterance_id, &draw, &aug.track, &spec)?;
        Ok((aug.track, spec))
    }
}
