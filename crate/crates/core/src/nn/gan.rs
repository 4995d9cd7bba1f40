//! Spectrogram enhancement GAN: a residual 2D-convolutional generator that
//! refines noisy mel spectrograms and a patch discriminator with a linear
//! output head.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::ObjectiveWeights;
use super::wavebender::{frames_to_tensor, tensor_to_frames};
use super::{leaky_relu, Conv2d, ParamStore};
use crate::error::{Error, Result};
use crate::mel::MelSpectrogram;
use crate::seed::rng_for;

const SLOPE: f64 = 0.2;

/// Kaiming-uniform gain for the leaky-ReLU layers.
fn hidden_scale() -> f64 {
    6f64.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub gen_layers: usize,
    pub gen_channels: usize,
    pub disc_layers: usize,
    pub disc_channels: usize,
    /// Additive Gaussian noise per bin, in normalized log-mel units.
    pub noise_std: f64,
    pub recon_weight_pre: f64,
    pub recon_weight_post: f64,
    pub adversarial_weight: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            gen_layers: 6,
            gen_channels: 64,
            disc_layers: 12,
            disc_channels: 64,
            noise_std: 0.01,
            recon_weight_pre: 1.0,
            recon_weight_post: 1.0,
            adversarial_weight: 1.0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.noise_std, self.recon_weight_pre, self.recon_weight_post, self.adversarial_weight];
        if self.gen_layers == 0 || self.disc_layers == 0 || self.gen_channels == 0 || self.disc_channels == 0 {
            return Err(Error::InvalidConfig("GAN layer and channel counts must be at least 1".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!("GAN weights and noise must be finite and >= 0: {weights:?}")));
        }
        Ok(())
    }

    pub fn objective_weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            recon_pre: self.recon_weight_pre,
            recon_post: self.recon_weight_post,
            adversarial: self.adversarial_weight,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    layers: Vec<Conv2d>,
    noise_std: f64,
    dtype: DType,
}

impl Generator {
    pub fn new(config: &GanConfig, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let n = config.gen_layers;
        let c = config.gen_channels;
        let layers = (0..n)
            .map(|i| {
                let c_in = if i == 0 { 1 } else { c };
                let c_out = if i + 1 == n { 1 } else { c };
                // zero-initialized last layer: the untrained generator is the identity on its input
                let scale = if i + 1 == n { 0.0 } else { hidden_scale() };
                Conv2d::new(store, &format!("{prefix}.conv{}", i + 1), c_in, c_out, 1, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            noise_std: config.noise_std,
            dtype: store.dtype(),
        })
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// `(B, M, T) -> (B, M, T)`; `noise` is added to the input before the
    /// convolutions and kept in the residual path.
    pub fn forward_tensor(&self, mel: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
        let (b, m, t) = mel.dims3()?;
        let noisy = match noise {
            Some(n) => (mel + n)?,
            None => mel.clone(),
        };
        let x = noisy.reshape((b, 1, m, t))?;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h, SLOPE)?;
            }
        }
        Ok((x + h)?.reshape((b, m, t))?)
    }

    /// Enhances one normalized spectrogram. Noise is drawn from a stream keyed
    /// by `noise_seed`, so equal seeds give bit-identical output.
    pub fn enhance(&self, mel: &MelSpectrogram, noise_seed: u64) -> Result<MelSpectrogram> {
        mel.check_finite()?;
        if !mel.normalized {
            return Err(Error::NormalizationState("denormalized; the generator works on normalized mels"));
        }
        let x = frames_to_tensor(&mel.bins, self.dtype)?;
        let (_, m, t) = x.dims3()?;
        let noise = if self.noise_std > 0.0 {
            let mut rng = rng_for(noise_seed, &[&"enhance"]);
            Some(gaussian_tensor(&mut rng, (1, m, t), self.noise_std, self.dtype)?)
        } else {
            None
        };
        let y = self.forward_tensor(&x, noise.as_ref())?;
        Ok(MelSpectrogram {
            bins: tensor_to_frames(&y.squeeze(0)?)?,
            frame_rate: mel.frame_rate,
            config_id: mel.config_id.clone(),
            normalized: true,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    layers: Vec<Conv2d>,
}

impl Discriminator {
    /// Every second layer has stride 2; the last layer maps to one channel
    /// with no activation.
    pub fn new(config: &GanConfig, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let n = config.disc_layers;
        let c = config.disc_channels;
        let layers = (0..n)
            .map(|i| {
                let c_in = if i == 0 { 1 } else { c };
                let c_out = if i + 1 == n { 1 } else { c };
                let stride = if i % 2 == 1 && i + 1 < n { 2 } else { 1 };
                let scale = if i + 1 == n { 1.0 } else { hidden_scale() };
                Conv2d::new(store, &format!("{prefix}.conv{}", i + 1), c_in, c_out, stride, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// `(B, M, T) -> (B, 1, M', T')` patch scores.
    pub fn forward_tensor(&self, mel: &Tensor) -> Result<Tensor> {
        let (b, m, t) = mel.dims3()?;
        let mut h = mel.reshape((b, 1, m, t))?;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.stride() > 1 {
                h = pad_to_even(&h)?;
            }
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = leaky_relu(&h, SLOPE)?;
            }
        }
        Ok(h)
    }
}

/// Appends a zero row or column to odd spatial dims. The output of a
/// stride-2 convolution is unchanged; candle's conv2d backward sizes both
/// dims from the height and fails when their parities differ.
fn pad_to_even(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = if h % 2 == 1 { x.pad_with_zeros(2, 0, 1)? } else { x.clone() };
    Ok(if w % 2 == 1 { x.pad_with_zeros(3, 0, 1)? } else { x })
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), std: f64, dtype: DType) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2;
    let data: Vec<f64> = (0..n).map(|_| std * gaussian(rng)).collect();
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}
