//! Normalized-autocorrelation pitch detection.
//!
//! For a mean-removed frame `x` of length `N` the normalized autocorrelation at
//! lag `τ` is
//!
//! ```text
//! r(τ) = Σ x[n]·x[n+τ] / sqrt(Σ x[n]² · Σ x[n+τ]²),   n = 0..N-τ
//! ```
//!
//! which lies in `[-1, 1]` and is invariant to the frame's gain. The period is
//! the shortest-lag local maximum inside the search range whose value is within
//! [`PitchDetector::octave_tolerance`] of the strongest local maximum; the frame
//! is voiced when that peak clears the voicing threshold.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PitchDetector {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum peak autocorrelation for a frame to count as voiced.
    pub voicing_threshold: f64,
    /// A shorter-lag peak wins over the global maximum if it reaches this
    /// fraction of it. Guards against picking a multiple of the period.
    pub octave_tolerance: f64,
}

impl Default for PitchDetector {
    fn default() -> Self {
        Self {
            min_hz: 60.0,
            max_hz: 400.0,
            voicing_threshold: 0.45,
            octave_tolerance: 0.93,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchEstimate {
    /// Estimated fundamental in Hz, `None` when the frame is unvoiced.
    pub f0_hz: Option<f64>,
    /// Autocorrelation value at the selected peak (0 when no peak exists).
    pub clarity: f64,
}

impl PitchDetector {
    pub fn lag_range(&self, sample_rate: u32) -> (usize, usize) {
        let sr = sample_rate as f64;
        let min_lag = (sr / self.max_hz).floor().max(2.0) as usize;
        let max_lag = (sr / self.min_hz).ceil() as usize;
        (min_lag, max_lag)
    }

    pub fn detect(&self, frame: &[f64], sample_rate: u32) -> PitchEstimate {
        let unvoiced = PitchEstimate {
            f0_hz: None,
            clarity: 0.0,
        };
        let n = frame.len();
        let (min_lag, max_lag) = self.lag_range(sample_rate);
        let max_lag = max_lag.min(n.saturating_sub(3));
        if max_lag <= min_lag + 1 {
            return unvoiced;
        }

        let mean = frame.iter().sum::<f64>() / n as f64;
        let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();

        // prefix[i] = Σ_{j<i} x[j]²
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &x {
            acc += v * v;
            prefix.push(acc);
        }

        let lo = min_lag - 1;
        let hi = max_lag + 1;
        let mut r = vec![0.0; hi + 1];
        for (lag, slot) in r.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let len = n - lag;
            let num: f64 = x[..len].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            let e_head = prefix[len];
            let e_tail = prefix[n] - prefix[lag];
            let den = (e_head * e_tail).sqrt();
            *slot = if den > 0.0 { num / den } else { 0.0 };
        }

        let peaks: Vec<usize> = (min_lag..=max_lag)
            .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
            .collect();
        let best = peaks.iter().map(|&t| r[t]).fold(f64::NEG_INFINITY, f64::max);
        if peaks.is_empty() || best <= 0.0 {
            return unvoiced;
        }
        let chosen = peaks
            .iter()
            .copied()
            .find(|&t| r[t] >= self.octave_tolerance * best)
            .unwrap_or(peaks[0]);

        let clarity = r[chosen];
        if clarity < self.voicing_threshold {
            return PitchEstimate {
                f0_hz: None,
                clarity,
            };
        }
        let (a, b, c) = (r[chosen - 1], r[chosen], r[chosen + 1]);
        let denom = a - 2.0 * b + c;
        let offset = if denom.abs() > 1e-12 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let period = chosen as f64 + offset;
        PitchEstimate {
            f0_hz: Some(sample_rate as f64 / period),
            clarity,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, sr: u32, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn sine_frequencies_in_range() {
        let det = PitchDetector::default();
        for f in [70.0, 100.0, 150.0, 220.0, 330.0] {
            let est = det.detect(&sine(f, 22_050, 1024), 22_050);
            let got = est.f0_hz.expect("voiced");
            assert!((got - f).abs() / f < 0.01, "{f} -> {got}");
        }
    }

    #[test]
    fn harmonic_rich_tone_does_not_jump_an_octave_down() {
        // Equal-amplitude harmonics 1..6 of 200 Hz.
        let sr = 22_050;
        let x: Vec<f64> = (0..1024)
            .map(|i| {
                (1..=6)
                    .map(|h| (2.0 * PI * 200.0 * h as f64 * i as f64 / sr as f64).sin())
                    .sum()
            })
            .collect();
        let got = PitchDetector::default().detect(&x, sr).f0_hz.unwrap();
        assert!((got - 200.0).abs() < 3.0, "{got}");
    }

    #[test]
    fn silence_is_unvoiced() {
        let est = PitchDetector::default().detect(&[0.0; 1024], 22_050);
        assert_eq!(est.f0_hz, None);
        assert_eq!(est.clarity, 0.0);
    }
}
