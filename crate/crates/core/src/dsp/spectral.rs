//! Spectral centroid and spectral slope of a single analysis frame.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Magnitude spectrum of a windowed frame, bins `0..=n_fft/2`.
pub struct MagnitudeSpectrum {
    fft: Arc<dyn Fft<f64>>,
    n_fft: usize,
    window: Vec<f64>,
    scratch: Vec<Complex<f64>>,
}

impl MagnitudeSpectrum {
    pub fn new(frame_length: usize) -> Self {
        let n_fft = frame_length.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Self {
            fft,
            n_fft,
            window: hann(frame_length, false),
            scratch: vec![Complex::default(); n_fft],
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn compute(&mut self, frame: &[f64]) -> Vec<f64> {
        for (i, slot) in self.scratch.iter_mut().enumerate() {
            *slot = match frame.get(i) {
                Some(&s) => Complex::new(s * self.window[i], 0.0),
                None => Complex::default(),
            };
        }
        self.fft.process(&mut self.scratch);
        self.scratch[..=self.n_fft / 2].iter().map(|c| c.norm()).collect()
    }
}

/// Hann window; `periodic` selects the DFT-even variant used by STFT front-ends.
pub fn hann(len: usize, periodic: bool) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = if periodic { len } else { len - 1 } as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

fn bin_frequencies(n_bins: usize, n_fft: usize, sample_rate: u32) -> impl Iterator<Item = f64> {
    let df = sample_rate as f64 / n_fft as f64;
    (0..n_bins).map(move |k| k as f64 * df)
}

/// Magnitude-weighted mean frequency. A silent frame reports a quarter of the
/// sample rate, the centroid of a flat spectrum.
pub fn spectral_centroid(magnitudes: &[f64], n_fft: usize, sample_rate: u32) -> f64 {
    let total: f64 = magnitudes.iter().sum();
    if total <= 0.0 {
        return sample_rate as f64 / 4.0;
    }
    bin_frequencies(magnitudes.len(), n_fft, sample_rate)
        .zip(magnitudes)
        .map(|(f, m)| f * m)
        .sum::<f64>()
        / total
}

/// Least-squares slope of the dB magnitude spectrum against linear frequency
/// (dB/Hz) over `0..=sample_rate/2`. Magnitudes are floored 200 dB below the
/// frame maximum so the slope stays finite and gain-invariant.
pub fn spectral_slope(magnitudes: &[f64], n_fft: usize, sample_rate: u32) -> f64 {
    let peak = magnitudes.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak <= 0.0 {
        return 0.0;
    }
    let floor = peak * 1e-10;
    let n = magnitudes.len() as f64;
    let freqs: Vec<f64> = bin_frequencies(magnitudes.len(), n_fft, sample_rate).collect();
    let db: Vec<f64> = magnitudes.iter().map(|&m| 20.0 * m.max(floor).log10()).collect();
    let mean_f = freqs.iter().sum::<f64>() / n;
    let mean_db = db.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (f, d) in freqs.iter().zip(&db) {
        sxy += (f - mean_f) * (d - mean_db);
        sxx += (f - mean_f) * (f - mean_f);
    }
    sxy / sxx
}
