//! Reference vocoder: pseudo-inverse mel inversion followed by fast
//! Griffin-Lim phase reconstruction.

use std::collections::HashMap;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use nalgebra::DMatrix;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::spectral::hann;
use crate::error::{Error, Result};
use crate::mel::{MelConfig, MelFilterbank, MelSpectrogram};
use crate::seed::rng_for;

pub const PINV_TENSOR: &str = "mel_pinv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GriffinLimConfig {
    pub iterations: usize,
    pub momentum: f64,
    /// Seeds the initial phase; output is a pure function of input and seed.
    pub seed: u64,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: 60,
            momentum: 0.99,
            seed: 0,
        }
    }
}

pub struct GriffinLim {
    config: MelConfig,
    gl: GriffinLimConfig,
    /// `(fft_size/2 + 1) × n_mels`
    pinv: Vec<Vec<f64>>,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GriffinLim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GriffinLim").field("gl", &self.gl).finish_non_exhaustive()
    }
}

impl GriffinLim {
    /// Moore-Penrose pseudo-inverse of the filterbank, stored as `mel_pinv`.
    pub fn weights(mel: &MelConfig) -> Result<HashMap<String, Tensor>> {
        mel.validate()?;
        let fb = MelFilterbank::new(mel);
        let (rows, cols) = fb.weights.dim();
        let m = DMatrix::from_fn(rows, cols, |i, j| fb.weights[[i, j]]);
        let pinv = m
            .pseudo_inverse(1e-10)
            .map_err(|e| Error::InvalidConfig(format!("filterbank pseudo-inverse failed: {e}")))?;
        let data: Vec<f64> = (0..cols).flat_map(|i| (0..rows).map(move |j| (i, j))).map(|(i, j)| pinv[(i, j)]).collect();
        let t = Tensor::from_vec(data, (cols, rows), &Device::Cpu)?;
        Ok(HashMap::from([(PINV_TENSOR.to_string(), t)]))
    }

    pub fn from_tensors(mel: MelConfig, gl: GriffinLimConfig, tensors: &HashMap<String, Tensor>) -> Result<Self> {
        mel.validate()?;
        if !(0.0..1.0).contains(&gl.momentum) {
            return Err(Error::InvalidConfig(format!("Griffin-Lim momentum {} outside [0, 1)", gl.momentum)));
        }
        let t = tensors
            .get(PINV_TENSOR)
            .ok_or_else(|| Error::InvalidInput(format!("weights lack `{PINV_TENSOR}`")))?;
        let n_bins = mel.fft_size / 2 + 1;
        if t.dims() != [n_bins, mel.n_mels] {
            return Err(Error::ShapeMismatch(format!(
                "{PINV_TENSOR} is {:?}, expected [{n_bins}, {}]",
                t.dims(),
                mel.n_mels
            )));
        }
        let pinv = t.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let mut window = vec![0.0; mel.fft_size];
        let offset = (mel.fft_size - mel.win_length) / 2;
        window[offset..offset + mel.win_length].copy_from_slice(&hann(mel.win_length, true));
        let mut planner = FftPlanner::new();
        Ok(Self {
            fft: planner.plan_fft_forward(mel.fft_size),
            ifft: planner.plan_fft_inverse(mel.fft_size),
            config: mel,
            gl,
            pinv,
            window,
        })
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.config
    }

    /// Linear magnitude estimate, `T × n_bins`, clipped at zero.
    pub fn magnitudes(&self, mel: &MelSpectrogram) -> Vec<Vec<f64>> {
        mel.bins
            .outer_iter()
            .map(|row| {
                let energy: Vec<f64> = row.iter().map(|v| v.exp()).collect();
                self.pinv
                    .iter()
                    .map(|w| w.iter().zip(&energy).map(|(a, b)| a * b).sum::<f64>().max(0.0))
                    .collect()
            })
            .collect()
    }

    fn pad(&self) -> usize {
        if self.config.center {
            (self.config.fft_size - self.config.hop) / 2
        } else {
            0
        }
    }

    fn stft(&self, signal: &[f64], n_frames: usize) -> Vec<Vec<Complex<f64>>> {
        let n_fft = self.config.fft_size;
        let n_bins = n_fft / 2 + 1;
        let mut buf = vec![Complex::default(); n_fft];
        (0..n_frames)
            .map(|t| {
                let start = t * self.config.hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex::new(signal[start + i] * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..n_bins].to_vec()
            })
            .collect()
    }

    /// Weighted overlap-add; returns the padded-domain signal.
    fn istft(&self, spec: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let n_fft = self.config.fft_size;
        let hop = self.config.hop;
        let len = (spec.len() - 1) * hop + n_fft;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::default(); n_fft];
        for (t, frame) in spec.iter().enumerate() {
            buf[..frame.len()].copy_from_slice(frame);
            for k in frame.len()..n_fft {
                buf[k] = frame[n_fft - k].conj();
            }
            buf[0].im = 0.0;
            if n_fft % 2 == 0 {
                buf[n_fft / 2].im = 0.0;
            }
            self.ifft.process(&mut buf);
            let start = t * hop;
            for i in 0..n_fft {
                out[start + i] += buf[i].re / n_fft as f64 * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }

    pub fn render(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let n_frames = mel.n_frames();
        if n_frames == 0 {
            return Ok(Vec::new());
        }
        let mags = self.magnitudes(mel);
        let n_bins = self.config.fft_size / 2 + 1;
        let mut rng = rng_for(self.gl.seed, &[&"griffin-lim"]);
        let mut angles: Vec<Vec<Complex<f64>>> = (0..n_frames)
            .map(|_| {
                (0..n_bins)
                    .map(|_| Complex::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
                    .collect()
            })
            .collect();
        let alpha = self.gl.momentum / (1.0 + self.gl.momentum);
        let mut previous: Vec<Vec<Complex<f64>>> = vec![vec![Complex::default(); n_bins]; n_frames];
        let apply = |angles: &[Vec<Complex<f64>>]| -> Vec<Vec<Complex<f64>>> {
            angles
                .iter()
                .zip(&mags)
                .map(|(a, m)| a.iter().zip(m).map(|(p, s)| p * s).collect())
                .collect()
        };
        for _ in 0..self.gl.iterations {
            let signal = self.istft(&apply(&angles));
            let rebuilt = self.stft(&signal, n_frames);
            for ((a, r), p) in angles.iter_mut().zip(&rebuilt).zip(&previous) {
                for ((a, r), p) in a.iter_mut().zip(r).zip(p) {
                    let v = r - p * alpha;
                    let n = v.norm();
                    *a = if n > 1e-16 { v / n } else { Complex::new(1.0, 0.0) };
                }
            }
            previous = rebuilt;
        }
        let signal = self.istft(&apply(&angles));
        let pad = self.pad();
        let want = n_frames * self.config.hop;
        let mut out: Vec<f64> = signal.into_iter().skip(pad).take(want).collect();
        out.resize(want, 0.0);
        Ok(out)
    }
}
