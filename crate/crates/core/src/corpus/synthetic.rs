//! Seeded cascade formant synthesizer used to build a speech-like desk corpus
//! and synthetic test signals.
//!
//! Each utterance is a chain of vowels, fricatives and pauses. Vowels use a
//! differentiated Rosenberg glottal pulse with an utterance-specific tilt
//! filter, a declining f0 contour with pitch accents, and four cascaded
//! resonators whose targets glide between vowels.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Utterance};
use crate::audio::Waveform;
use crate::error::Result;
use crate::seed::rng_for;

/// (F1, F2, F3) targets in Hz for an adult female voice.
const VOWELS: [(f64, f64, f64); 9] = [
    (310.0, 2790.0, 3310.0),
    (430.0, 2480.0, 3070.0),
    (610.0, 2330.0, 2990.0),
    (860.0, 2050.0, 2850.0),
    (850.0, 1220.0, 2810.0),
    (760.0, 1400.0, 2780.0),
    (590.0, 920.0, 2710.0),
    (470.0, 1160.0, 2680.0),
    (370.0, 950.0, 2670.0),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeskCorpusConfig {
    pub n_utterances: usize,
    pub sample_rate: u32,
    pub min_secs: f64,
    pub max_secs: f64,
    pub seed: u64,
}

impl Default for DeskCorpusConfig {
    fn default() -> Self {
        Self {
            n_utterances: 50,
            sample_rate: 22_050,
            min_secs: 2.4,
            max_secs: 3.2,
            seed: 2022,
        }
    }
}

pub fn desk_corpus(config: &DeskCorpusConfig) -> Result<Corpus> {
    let utterances = (0..config.n_utterances)
        .map(|i| {
            let id = format!("desk_{i:04}");
            let mut rng = rng_for(config.seed, &[&id]);
            let secs = rng.gen_range(config.min_secs..=config.max_secs);
            synthesize_utterance(&mut rng, secs, config.sample_rate).map(|wave| Utterance { id, wave })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(utterances)
}

/// Klatt-style two-pole resonator with unity DC gain.
#[derive(Default, Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let t = 1.0 / sr;
        let c = -(-2.0 * PI * bw * t).exp();
        let b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Rosenberg glottal flow over one period, `phase ∈ [0, 1)`.
fn rosenberg(phase: f64, open_quotient: f64) -> f64 {
    let rise = 0.6 * open_quotient;
    let fall = 0.4 * open_quotient;
    if phase < rise {
        0.5 * (1.0 - (PI * phase / rise).cos())
    } else if phase < rise + fall {
        (0.5 * PI * (phase - rise) / fall).cos()
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
enum Segment {
    Vowel { formants: (f64, f64, f64) },
    Fricative { centre: f64 },
    Pause,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn synthesize_utterance(rng: &mut ChaCha8Rng, secs: f64, sample_rate: u32) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;

    // segment plan: (segment, start sample, end sample)
    let mut plan = Vec::new();
    let mut cursor = (rng.gen_range(0.04..0.10) * sr) as usize;
    plan.push((Segment::Pause, 0, cursor));
    while cursor < n {
        let roll: f64 = rng.gen();
        let (segment, dur) = if roll < 0.72 {
            let (f1, f2, f3) = VOWELS[rng.gen_range(0..VOWELS.len())];
            let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(0.92..1.08);
            let formants = (f1 * jitter(rng), f2 * jitter(rng), f3 * jitter(rng));
            (Segment::Vowel { formants }, rng.gen_range(0.14..0.34))
        } else if roll < 0.9 {
            (
                Segment::Fricative {
                    centre: rng.gen_range(3500.0..6500.0),
                },
                rng.gen_range(0.06..0.12),
            )
        } else {
            (Segment::Pause, rng.gen_range(0.05..0.14))
        };
        let end = (cursor + (dur * sr) as usize).min(n);
        plan.push((segment, cursor, end));
        cursor = end;
    }

    let base_f0 = rng.gen_range(175.0..235.0);
    let declination = rng.gen_range(0.12..0.25);
    let accents: Vec<(f64, f64, f64)> = (0..rng.gen_range(2..5))
        .map(|_| (rng.gen_range(0.1..0.9) * secs, rng.gen_range(15.0..45.0), rng.gen_range(0.08..0.2)))
        .collect();
    let tilt_base = rng.gen_range(0.05..0.65);
    let tilt_drift = rng.gen_range(-0.2..0.2);
    let open_quotient = rng.gen_range(0.5..0.75);
    let breathiness = rng.gen_range(0.01..0.06);

    let mut out = vec![0.0; n];
    let mut resonators = [Resonator::default(); 4];
    let mut fric = Resonator::default();
    let mut formant_state = (500.0, 1500.0, 2600.0);
    let mut voicing_gain = 0.0;
    let mut fric_gain = 0.0;
    let mut phase = 0.0;
    let mut prev_flow = 0.0;
    let mut tilt_state = 0.0;
    let smooth = (-1.0 / (0.025 * sr)).exp();
    let gain_smooth = (-1.0 / (0.008 * sr)).exp();

    let mut seg_idx = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        while seg_idx + 1 < plan.len() && i >= plan[seg_idx].2 {
            seg_idx += 1;
        }
        let (segment, _, _) = plan[seg_idx];
        let time = i as f64 / sr;
        let (target_voice, target_fric) = match segment {
            Segment::Vowel { formants } => {
                formant_state.0 = smooth * formant_state.0 + (1.0 - smooth) * formants.0;
                formant_state.1 = smooth * formant_state.1 + (1.0 - smooth) * formants.1;
                formant_state.2 = smooth * formant_state.2 + (1.0 - smooth) * formants.2;
                (1.0, 0.0)
            }
            Segment::Fricative { .. } => (0.0, 1.0),
            Segment::Pause => (0.0, 0.0),
        };
        voicing_gain = gain_smooth * voicing_gain + (1.0 - gain_smooth) * target_voice;
        fric_gain = gain_smooth * fric_gain + (1.0 - gain_smooth) * target_fric;

        let accent: f64 = accents
            .iter()
            .map(|(c, h, w)| h * (-0.5 * ((time - c) / w).powi(2)).exp())
            .sum();
        let f0 = base_f0 * (1.0 - declination * time / secs) + accent;
        phase += f0 / sr;
        if phase >= 1.0 {
            phase -= 1.0;
        }
        let flow = rosenberg(phase, open_quotient);
        let excitation = (flow - prev_flow) * sr / f0 * 0.05;
        prev_flow = flow;
        let tilt = (tilt_base + tilt_drift * time / secs).clamp(0.0, 0.85);
        tilt_state = (1.0 - tilt) * excitation + tilt * tilt_state;
        let source = tilt_state + breathiness * gaussian(rng) * 0.1;

        let (f1, f2, f3) = formant_state;
        let mut voiced = source * voicing_gain;
        voiced = resonators[0].step(voiced, f1, 60.0 + 0.05 * f1, sr);
        voiced = resonators[1].step(voiced, f2, 80.0 + 0.04 * f2, sr);
        voiced = resonators[2].step(voiced, f3, 140.0, sr);
        voiced = resonators[3].step(voiced, 4100.0, 220.0, sr);

        let fric_centre = match segment {
            Segment::Fricative { centre } => centre,
            _ => 5000.0,
        };
        let noise = fric.step(gaussian(rng) * fric_gain, fric_centre, 1500.0, sr) * 0.25;

        *slot = voiced + noise + 2e-4 * gaussian(rng);
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    let target_peak = rng.gen_range(0.45..0.9);
    out.iter_mut().for_each(|v| *v *= target_peak / peak);
    Waveform::new(out, sample_rate)
}

/// A held vowel with a constant fundamental.
pub fn held_vowel(f0: f64, formants: (f64, f64, f64), secs: f64, sample_rate: u32) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;
    let mut resonators = [Resonator::default(); 4];
    let mut phase = 0.0;
    let mut prev = 0.0;
    let mut tilt_state = 0.0;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            phase += f0 / sr;
            if phase >= 1.0 {
                phase -= 1.0;
            }
            let flow = rosenberg(phase, 0.6);
            let e = (flow - prev) * sr / f0 * 0.05;
            prev = flow;
            tilt_state = 0.7 * e + 0.3 * tilt_state;
            let mut y = tilt_state;
            y = resonators[0].step(y, formants.0, 80.0, sr);
            y = resonators[1].step(y, formants.1, 100.0, sr);
            y = resonators[2].step(y, formants.2, 140.0, sr);
            resonators[3].step(y, 4100.0, 220.0, sr)
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Waveform::new(samples.into_iter().map(|v| 0.6 * v / peak).collect(), sample_rate)
}

/// Band-unlimited sawtooth in `[-amp, amp]`.
pub fn sawtooth(freq: f64, secs: f64, amp: f64, sample_rate: u32) -> Result<Waveform> {
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;
    Waveform::new(
        (0..n)
            .map(|i| {
                let p = (freq * i as f64 / sr).fract();
                amp * (2.0 * p - 1.0)
            })
            .collect(),
        sample_rate,
    )
}

pub fn white_noise(secs: f64, amp: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let mut rng = rng_for(seed, &[&"white_noise"]);
    let n = (secs * sample_rate as f64) as usize;
    Waveform::new((0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(), sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_bounded() {
        let cfg = DeskCorpusConfig {
            n_utterances: 3,
            ..Default::default()
        };
        let a = desk_corpus(&cfg).unwrap();
        let b = desk_corpus(&cfg).unwrap();
        assert_eq!(a.ids(), vec!["desk_0000", "desk_0001", "desk_0002"]);
        for (x, y) in a.utterances().iter().zip(b.utterances()) {
            assert_eq!(x.wave, y.wave);
            assert!(x.wave.peak() <= 0.9 + 1e-12);
            assert!(x.wave.duration_secs() >= cfg.min_secs - 1e-3);
        }
    }
}
