//! Native HiFi-GAN generator inference.
//!
//! Parameter names follow the reference implementation (`conv_pre`,
//! `ups.{i}`, `resblocks.{j}.convs{1,2}.{d}`, `conv_post`). Weight-normalized
//! checkpoints (`weight_g`/`weight_v`) are folded at load time.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mel::{MelConfig, MelSpectrogram};
use crate::nn::gan::gaussian;
use crate::seed::rng_for;

const LRELU_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HifiGanConfig {
    pub upsample_rates: Vec<usize>,
    pub upsample_kernel_sizes: Vec<usize>,
    pub upsample_initial_channel: usize,
    pub resblock_kernel_sizes: Vec<usize>,
    pub resblock_dilation_sizes: Vec<Vec<usize>>,
}

impl Default for HifiGanConfig {
    /// The V1 generator.
    fn default() -> Self {
        Self {
            upsample_rates: vec![8, 8, 2, 2],
            upsample_kernel_sizes: vec![16, 16, 4, 4],
            upsample_initial_channel: 512,
            resblock_kernel_sizes: vec![3, 7, 11],
            resblock_dilation_sizes: vec![vec![1, 3, 5]; 3],
        }
    }
}

impl HifiGanConfig {
    pub fn validate(&self, hop: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.upsample_rates.is_empty() || self.upsample_rates.len() != self.upsample_kernel_sizes.len() {
            return bad("upsample rates and kernel sizes must be non-empty and of equal length".into());
        }
        let product: usize = self.upsample_rates.iter().product();
        if product != hop {
            return bad(format!("upsample rates multiply to {product}, the mel hop is {hop}"));
        }
        for (&u, &k) in self.upsample_rates.iter().zip(&self.upsample_kernel_sizes) {
            if u == 0 || k < u || (k - u) % 2 != 0 {
                return bad(format!("upsample kernel {k} cannot realise rate {u} exactly"));
            }
        }
        if self.upsample_initial_channel >> self.upsample_rates.len() == 0 {
            return bad("too few initial channels for the number of upsampling stages".into());
        }
        if self.resblock_kernel_sizes.is_empty() || self.resblock_kernel_sizes.len() != self.resblock_dilation_sizes.len() {
            return bad("one dilation list is needed per resblock kernel".into());
        }
        if self.resblock_kernel_sizes.iter().any(|k| k % 2 == 0) {
            return bad("resblock kernels must be odd".into());
        }
        Ok(())
    }

    fn stage_channels(&self, i: usize) -> usize {
        self.upsample_initial_channel >> (i + 1)
    }

    /// `(name, shape)` of every parameter, in folded form.
    pub fn parameter_shapes(&self, n_mels: usize) -> Vec<(String, Vec<usize>)> {
        let c0 = self.upsample_initial_channel;
        let mut out = vec![
            ("conv_pre.weight".to_string(), vec![c0, n_mels, 7]),
            ("conv_pre.bias".to_string(), vec![c0]),
        ];
        let nk = self.resblock_kernel_sizes.len();
        for (i, &k) in self.upsample_kernel_sizes.iter().enumerate() {
            let c_in = self.upsample_initial_channel >> i;
            let c = self.stage_channels(i);
            out.push((format!("ups.{i}.weight"), vec![c_in, c, k]));
            out.push((format!("ups.{i}.bias"), vec![c]));
            for (j, (&rk, dil)) in self.resblock_kernel_sizes.iter().zip(&self.resblock_dilation_sizes).enumerate() {
                let idx = i * nk + j;
                for which in ["convs1", "convs2"] {
                    for d in 0..dil.len() {
                        out.push((format!("resblocks.{idx}.{which}.{d}.weight"), vec![c, c, rk]));
                        out.push((format!("resblocks.{idx}.{which}.{d}.bias"), vec![c]));
                    }
                }
            }
        }
        let c_last = self.stage_channels(self.upsample_rates.len() - 1);
        out.push(("conv_post.weight".to_string(), vec![1, c_last, 7]));
        out.push(("conv_post.bias".to_string(), vec![1]));
        out
    }

    /// Seeded random weights in weight-norm form, for smoke tests and bundle
    /// plumbing checks. The audio is meaningless.
    pub fn random_weights(&self, n_mels: usize, seed: u64) -> Result<HashMap<String, Tensor>> {
        let mut rng = rng_for(seed, &[&"hifigan-random"]);
        let mut out = HashMap::new();
        for (name, shape) in self.parameter_shapes(n_mels) {
            let n: usize = shape.iter().product();
            if let Some(stem) = name.strip_suffix(".weight") {
                let v: Vec<f32> = (0..n).map(|_| gaussian(&mut rng) as f32).collect();
                let g: Vec<f32> = (0..shape[0]).map(|_| rng.gen_range(0.05f32..0.3)).collect();
                let mut g_shape = vec![1; shape.len()];
                g_shape[0] = shape[0];
                out.insert(format!("{stem}.weight_v"), Tensor::from_vec(v, shape.as_slice(), &Device::Cpu)?);
                out.insert(format!("{stem}.weight_g"), Tensor::from_vec(g, g_shape.as_slice(), &Device::Cpu)?);
            } else {
                let b: Vec<f32> = (0..n).map(|_| 0.01 * gaussian(&mut rng) as f32).collect();
                out.insert(name, Tensor::from_vec(b, shape.as_slice(), &Device::Cpu)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
    dilation: usize,
}

impl Conv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv1d(&self.weight, self.padding, 1, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct Up {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Up {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // crop the padding ourselves: candle's output-length formula
        // underflows for a single input frame
        let y = x.conv_transpose1d(&self.weight, 0, 0, self.stride, 1, 1)?;
        let len = y.dim(2)? - 2 * self.padding;
        let y = y.narrow(2, self.padding, len)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    convs1: Vec<Conv>,
    convs2: Vec<Conv>,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (c1, c2) in self.convs1.iter().zip(&self.convs2) {
            let xt = c1.forward(&leaky_relu(&x, LRELU_SLOPE)?)?;
            let xt = c2.forward(&leaky_relu(&xt, LRELU_SLOPE)?)?;
            x = (xt + x)?;
        }
        Ok(x)
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// `g·v/‖v‖`, the norm taken over every axis but the first.
pub fn fold_weight_norm(g: &Tensor, v: &Tensor) -> Result<Tensor> {
    let rank = v.rank();
    let mut norm = v.sqr()?;
    for axis in (1..rank).rev() {
        norm = norm.sum_keepdim(axis)?;
    }
    let norm = norm.sqrt()?;
    Ok(v.broadcast_mul(&g.broadcast_div(&norm)?)?)
}

fn take(tensors: &HashMap<String, Tensor>, stem: &str, shape: &[usize]) -> Result<(Tensor, Tensor)> {
    let weight = match tensors.get(&format!("{stem}.weight")) {
        Some(w) => w.clone(),
        None => {
            let g = tensors.get(&format!("{stem}.weight_g"));
            let v = tensors.get(&format!("{stem}.weight_v"));
            match (g, v) {
                (Some(g), Some(v)) => fold_weight_norm(&g.to_dtype(DType::F32)?, &v.to_dtype(DType::F32)?)?,
                _ => return Err(Error::InvalidInput(format!("vocoder weights lack {stem}.weight"))),
            }
        }
    };
    if weight.dims() != shape {
        return Err(Error::ShapeMismatch(format!("{stem}.weight is {:?}, expected {shape:?}", weight.dims())));
    }
    let bias = tensors
        .get(&format!("{stem}.bias"))
        .ok_or_else(|| Error::InvalidInput(format!("vocoder weights lack {stem}.bias")))?;
    if bias.dims() != [shape[if stem.starts_with("ups.") { 1 } else { 0 }]] {
        return Err(Error::ShapeMismatch(format!("{stem}.bias has shape {:?}", bias.dims())));
    }
    Ok((weight.to_dtype(DType::F32)?, bias.to_dtype(DType::F32)?))
}

#[derive(Debug, Clone)]
pub struct HifiGan {
    mel: MelConfig,
    config: HifiGanConfig,
    conv_pre: Conv,
    ups: Vec<Up>,
    resblocks: Vec<ResBlock>,
    conv_post: Conv,
}

impl HifiGan {
    pub fn from_tensors(mel: MelConfig, config: HifiGanConfig, tensors: &HashMap<String, Tensor>) -> Result<Self> {
        config.validate(mel.hop)?;
        let shapes: HashMap<String, Vec<usize>> = config.parameter_shapes(mel.n_mels).into_iter().collect();
        let conv = |stem: &str, padding: usize, dilation: usize| -> Result<Conv> {
            let (weight, bias) = take(tensors, stem, &shapes[&format!("{stem}.weight")])?;
            Ok(Conv {
                weight,
                bias,
                padding,
                dilation,
            })
        };
        let conv_pre = conv("conv_pre", 3, 1)?;
        let nk = config.resblock_kernel_sizes.len();
        let mut ups = Vec::new();
        let mut resblocks = Vec::new();
        for (i, (&u, &k)) in config.upsample_rates.iter().zip(&config.upsample_kernel_sizes).enumerate() {
            let stem = format!("ups.{i}");
            let (weight, bias) = take(tensors, &stem, &shapes[&format!("{stem}.weight")])?;
            ups.push(Up {
                weight,
                bias,
                stride: u,
                padding: (k - u) / 2,
            });
            for (j, (&rk, dil)) in config.resblock_kernel_sizes.iter().zip(&config.resblock_dilation_sizes).enumerate() {
                let idx = i * nk + j;
                let convs1 = dil
                    .iter()
                    .enumerate()
                    .map(|(d, &dl)| conv(&format!("resblocks.{idx}.convs1.{d}"), (rk * dl - dl) / 2, dl))
                    .collect::<Result<Vec<_>>>()?;
                let convs2 = (0..dil.len())
                    .map(|d| conv(&format!("resblocks.{idx}.convs2.{d}"), (rk - 1) / 2, 1))
                    .collect::<Result<Vec<_>>>()?;
                resblocks.push(ResBlock { convs1, convs2 });
            }
        }
        let conv_post = conv("conv_post", 3, 1)?;
        Ok(Self {
            mel,
            config,
            conv_pre,
            ups,
            resblocks,
            conv_post,
        })
    }

    pub fn config(&self) -> &HifiGanConfig {
        &self.config
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    /// `(1, n_mels, T)` log mel to `(1, 1, T·hop)` audio.
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let nk = self.config.resblock_kernel_sizes.len();
        let mut x = self.conv_pre.forward(mel)?;
        for (i, up) in self.ups.iter().enumerate() {
            x = up.forward(&leaky_relu(&x, LRELU_SLOPE)?)?;
            let mut acc = self.resblocks[i * nk].forward(&x)?;
            for j in 1..nk {
                acc = (acc + self.resblocks[i * nk + j].forward(&x)?)?;
            }
            x = (acc / nk as f64)?;
        }
        // the reference uses the framework default slope here
        let x = self.conv_post.forward(&leaky_relu(&x, 0.01)?)?;
        Ok(x.tanh()?)
    }

    pub fn render(&self, mel: &MelSpectrogram) -> Result<Vec<f64>> {
        let (t, m) = mel.bins.dim();
        let data: Vec<f32> = mel.bins.t().iter().map(|&v| v as f32).collect();
        let x = Tensor::from_vec(data, (1, m, t), &Device::Cpu)?;
        let y = self.forward(&x)?.flatten_all()?;
        Ok(y.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_mel() -> MelConfig {
        MelConfig {
            fft_size: 64,
            win_length: 64,
            hop: 16,
            n_mels: 8,
            ..MelConfig::default()
        }
    }

    fn small_cfg() -> HifiGanConfig {
        HifiGanConfig {
            upsample_rates: vec![4, 4],
            upsample_kernel_sizes: vec![8, 8],
            upsample_initial_channel: 16,
            resblock_kernel_sizes: vec![3, 5],
            resblock_dilation_sizes: vec![vec![1, 3], vec![1, 3]],
        }
    }

    fn mel(t: usize) -> MelSpectrogram {
        let cfg = small_mel();
        MelSpectrogram {
            bins: ndarray::Array2::from_shape_fn((t, cfg.n_mels), |(i, m)| -4.0 + ((i * 7 + m * 3) % 11) as f64 * 0.3),
            frame_rate: cfg.frame_rate(),
            config_id: cfg.fingerprint(),
            normalized: false,
        }
    }

    #[test]
    fn v1_validates_against_the_standard_hop() {
        HifiGanConfig::default().validate(256).unwrap();
        assert!(HifiGanConfig::default().validate(200).is_err());
        let mut odd = small_cfg();
        odd.upsample_kernel_sizes = vec![7, 8];
        assert!(odd.validate(16).is_err());
    }

    #[test]
    fn random_weights_render_hop_samples_per_frame() {
        let cfg = small_cfg();
        let w = cfg.random_weights(8, 3).unwrap();
        let net = HifiGan::from_tensors(small_mel(), cfg, &w).unwrap();
        for t in [1, 5, 23] {
            let y = net.render(&mel(t)).unwrap();
            assert_eq!(y.len(), t * 16);
            assert!(y.iter().all(|v| v.abs() <= 1.0));
        }
        assert_eq!(net.render(&mel(9)).unwrap(), net.render(&mel(9)).unwrap());
    }

    #[test]
    fn folded_and_weight_norm_forms_agree() {
        let cfg = small_cfg();
        let w = cfg.random_weights(8, 4).unwrap();
        let mut folded = HashMap::new();
        for (k, v) in &w {
            if let Some(stem) = k.strip_suffix(".weight_v") {
                let g = &w[&format!("{stem}.weight_g")];
                folded.insert(format!("{stem}.weight"), fold_weight_norm(g, v).unwrap());
            } else if !k.ends_with(".weight_g") {
                folded.insert(k.clone(), v.clone());
            }
        }
        let a = HifiGan::from_tensors(small_mel(), cfg.clone(), &w).unwrap().render(&mel(6)).unwrap();
        let b = HifiGan::from_tensors(small_mel(), cfg, &folded).unwrap().render(&mel(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weight_norm_fold_matches_hand_computation() {
        let v = Tensor::new(&[[[3.0f32, 4.0]], [[1.0, 0.0]]], &Device::Cpu).unwrap();
        let g = Tensor::new(&[[[2.0f32]], [[5.0]]], &Device::Cpu).unwrap();
        let w = fold_weight_norm(&g, &v).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(w, vec![1.2, 1.6, 5.0, 0.0]);
    }

    #[test]
    fn missing_tensor_is_named() {
        let cfg = small_cfg();
        let mut w = cfg.random_weights(8, 5).unwrap();
        w.remove("conv_post.bias");
        let err = HifiGan::from_tensors(small_mel(), cfg, &w).unwrap_err();
        assert!(err.to_string().contains("conv_post.bias"));
    }
}
