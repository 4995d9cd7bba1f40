//! Residual 1D-convolutional regression network from parameter tracks to
//! log mel spectrograms.
//!
//! Each block is `conv → group-norm → SiLU → conv → group-norm` plus an
//! additive shortcut (1×1 projection when the width changes), followed by
//! SiLU. The final block drops the closing norm and activation so the output
//! is an unconstrained regression. Long skips add a 1×1-projected copy of a
//! block's output to the input of a later block. All convolutions are stride 1
//! with zero "same" padding, so the output keeps the input's frame count.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Conv1d, FrameGroupNorm, ParamStore};
use crate::error::{Error, Result};
use crate::mel::MelSpectrogram;
use crate::track::{Feature, ParameterTrack};

/// Five normalized features plus the voicing flag.
pub const INPUT_CHANNELS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WavebenderNetConfig {
    pub in_channels: usize,
    /// Output width of each residual block; the last entry is the number of
    /// output channels (mel bands).
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    pub groups: usize,
    /// 1-based `(source, target)`: output of block `source` is added to the
    /// input of block `target`.
    pub long_skips: Vec<(usize, usize)>,
}

impl Default for WavebenderNetConfig {
    fn default() -> Self {
        Self {
            in_channels: INPUT_CHANNELS,
            widths: vec![128, 256, 512, 512, 512, 512, 256, 80],
            kernel_size: 5,
            groups: 16,
            long_skips: vec![(1, 8), (2, 7)],
        }
    }
}

impl WavebenderNetConfig {
    /// Two blocks, eight hidden channels; small enough for finite differences.
    pub fn tiny(out_channels: usize) -> Self {
        Self {
            in_channels: INPUT_CHANNELS,
            widths: vec![8, out_channels],
            kernel_size: 3,
            groups: 2,
            long_skips: vec![],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn out_channels(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    fn block_io(&self, block: usize) -> (usize, usize) {
        let c_in = if block == 0 { self.in_channels } else { self.widths[block - 1] };
        (c_in, self.widths[block])
    }

    /// Frames of context on each side that can influence one output frame.
    pub fn receptive_radius(&self) -> usize {
        self.n_blocks() * 2 * (self.kernel_size / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.widths.is_empty() || self.in_channels == 0 || self.widths.contains(&0) {
            return bad("channel widths must be positive and at least one block is required".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel size {} must be odd for same padding", self.kernel_size));
        }
        for b in 0..self.n_blocks() {
            let (c_in, c_out) = self.block_io(b);
            let inner = c_in.max(c_out);
            let last = b + 1 == self.n_blocks();
            if inner % self.groups != 0 || (!last && c_out % self.groups != 0) {
                return bad(format!(
                    "block {} widths ({c_in}->{inner}->{c_out}) are not divisible by {} groups",
                    b + 1,
                    self.groups
                ));
            }
        }
        for &(s, t) in &self.long_skips {
            if !(s >= 1 && s < t && t <= self.n_blocks()) {
                return bad(format!("long skip {s}->{t} must satisfy 1 <= source < target <= {}", self.n_blocks()));
            }
        }
        let n = self.n_blocks();
        if n >= 3 {
            let mid = self.widths[n / 2];
            if mid < self.widths[0] || mid < self.widths[n - 2] {
                return bad(format!("intermediate width {mid} is narrower than the end widths"));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    norm1: FrameGroupNorm,
    conv2: Conv1d,
    norm2: Option<FrameGroupNorm>,
    shortcut: Option<Conv1d>,
    last: bool,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.silu()?;
        let mut h = self.conv2.forward(&h)?;
        if let Some(norm) = &self.norm2 {
            h = norm.forward(&h)?;
        }
        let skip = match &self.shortcut {
            Some(proj) => proj.forward(x)?,
            None => x.clone(),
        };
        let y = (h + skip)?;
        if self.last {
            Ok(y)
        } else {
            Ok(y.silu()?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct WavebenderNet {
    config: WavebenderNetConfig,
    blocks: Vec<ResBlock>,
    skips: Vec<(usize, usize, Conv1d)>,
    dtype: DType,
}

impl WavebenderNet {
    /// Registers (or reuses) parameters under `prefix` in `store`.
    pub fn new(config: WavebenderNetConfig, store: &mut ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let n = config.n_blocks();
        let mut blocks = Vec::with_capacity(n);
        for b in 0..n {
            let (c_in, c_out) = config.block_io(b);
            let inner = c_in.max(c_out);
            let last = b + 1 == n;
            let name = format!("{prefix}.blocks.{}", b + 1);
            blocks.push(ResBlock {
                conv1: Conv1d::new(store, &format!("{name}.conv1"), c_in, inner, k)?,
                norm1: FrameGroupNorm::new(store, &format!("{name}.norm1"), inner, config.groups)?,
                conv2: Conv1d::new(store, &format!("{name}.conv2"), inner, c_out, k)?,
                norm2: if last {
                    None
                } else {
                    Some(FrameGroupNorm::new(store, &format!("{name}.norm2"), c_out, config.groups)?)
                },
                shortcut: if c_in != c_out {
                    Some(Conv1d::new(store, &format!("{name}.shortcut"), c_in, c_out, 1)?)
                } else {
                    None
                },
                last,
            });
        }
        let mut skips = Vec::new();
        for &(s, t) in &config.long_skips {
            let c_src = config.widths[s - 1];
            let c_dst = config.block_io(t - 1).0;
            skips.push((s, t, Conv1d::new(store, &format!("{prefix}.skips.{s}_{t}"), c_src, c_dst, 1)?));
        }
        Ok(Self {
            config,
            blocks,
            skips,
            dtype: store.dtype(),
        })
    }

    pub fn config(&self) -> &WavebenderNetConfig {
        &self.config
    }

    /// `(B, in_channels, T) -> (B, out_channels, T)`.
    pub fn forward_tensor(&self, x: &Tensor, use_long_skips: bool) -> Result<Tensor> {
        let (_, c, _) = x.dims3()?;
        if c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (b, block) in self.blocks.iter().enumerate() {
            let block_no = b + 1;
            if use_long_skips {
                for (s, _, proj) in self.skips.iter().filter(|(_, t, _)| *t == block_no) {
                    h = (h + proj.forward(&outputs[s - 1])?)?;
                }
            }
            h = block.forward(&h)?;
            outputs.push(h.clone());
        }
        Ok(h)
    }

    /// Runs one normalized track and returns the normalized log mel prediction.
    pub fn forward(&self, track: &ParameterTrack) -> Result<MelSpectrogram> {
        let x = track_to_tensor(track, self.dtype)?;
        let y = self.forward_tensor(&x, true)?;
        let bins = tensor_to_frames(&y.squeeze(0)?)?;
        Ok(MelSpectrogram {
            bins,
            frame_rate: track.frame_rate(),
            config_id: String::new(),
            normalized: true,
        })
    }
}

/// `(1, 6, T)` network input from a normalized track.
pub fn track_to_tensor(track: &ParameterTrack, dtype: DType) -> Result<Tensor> {
    if !track.is_normalized() {
        return Err(Error::NormalizationState("denormalized; the network needs z-scored input"));
    }
    let t = track.n_frames();
    let mut data = Vec::with_capacity(INPUT_CHANNELS * t);
    for f in Feature::ALL {
        data.extend(track.column(f).iter().copied());
    }
    data.extend(track.voicing().iter().map(|&v| f64::from(u8::from(v))));
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite network input".into()));
    }
    Ok(Tensor::from_vec(data, (1, INPUT_CHANNELS, t), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `(C, T)` tensor to a `T × C` matrix.
pub fn tensor_to_frames(x: &Tensor) -> Result<Array2<f64>> {
    let (c, t) = x.dims2()?;
    let data = x.t()?.contiguous()?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    Array2::from_shape_vec((t, c), data).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// `T × C` matrix to a `(1, C, T)` tensor.
pub fn frames_to_tensor(frames: &Array2<f64>, dtype: DType) -> Result<Tensor> {
    let (t, c) = frames.dim();
    let data: Vec<f64> = frames.t().iter().copied().collect();
    Ok(Tensor::from_vec(data, (1, c, t), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackMeta;
    use rand::{Rng, SeedableRng};

    fn random_input(t: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..INPUT_CHANNELS * t).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::from_vec(data, (1, INPUT_CHANNELS, t), &Device::Cpu).unwrap()
    }

    fn small() -> WavebenderNetConfig {
        WavebenderNetConfig {
            in_channels: 6,
            widths: vec![16, 32, 32, 16, 12],
            kernel_size: 5,
            groups: 4,
            long_skips: vec![(1, 5), (2, 4)],
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = WavebenderNetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_blocks(), 8);
        assert_eq!(cfg.out_channels(), 80);
        assert_eq!(cfg.receptive_radius(), 32);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small();
        c.long_skips = vec![(3, 2)];
        assert!(c.validate().is_err());
        let mut c = small();
        c.long_skips = vec![(1, 9)];
        assert!(c.validate().is_err());
        let mut c = small();
        c.groups = 5;
        assert!(c.validate().is_err());
        let mut c = small();
        c.widths = vec![64, 8, 64, 12];
        assert!(c.validate().is_err());
    }

    #[test]
    fn preserves_length() {
        let mut store = ParamStore::new(DType::F64, 1);
        let net = WavebenderNet::new(small(), &mut store, "net").unwrap();
        for t in [1, 2, 7, 33] {
            let y = net.forward_tensor(&random_input(t, t as u64), true).unwrap();
            assert_eq!(y.dims(), &[1, 12, t]);
        }
    }

    #[test]
    fn locality_matches_receptive_field() {
        let cfg = small();
        let radius = cfg.receptive_radius();
        let mut store = ParamStore::new(DType::F64, 2);
        let net = WavebenderNet::new(cfg, &mut store, "net").unwrap();
        let t = 120;
        let t0 = 60;
        let a = random_input(t, 1);
        let mut data = a.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        for c in 0..INPUT_CHANNELS {
            for f in t0 + radius..t {
                data[c * t + f] += 1.5;
            }
        }
        let b = Tensor::from_vec(data, (1, INPUT_CHANNELS, t), &Device::Cpu).unwrap();
        let ya = net.forward_tensor(&a, true).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let yb = net.forward_tensor(&b, true).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        for c in 0..ya.len() {
            for f in 0..t0 - radius {
                assert_eq!(ya[c][f], yb[c][f], "frame {f} changed");
            }
            // and the change is visible where the inputs differ
        }
        assert!((0..ya.len()).any(|c| ya[c][t - 1] != yb[c][t - 1]));
    }

    #[test]
    fn long_skips_are_live() {
        let mut store = ParamStore::new(DType::F64, 3);
        let net = WavebenderNet::new(small(), &mut store, "net").unwrap();
        let x = random_input(20, 5);
        let with = net.forward_tensor(&x, true).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let without = net.forward_tensor(&x, false).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(with.iter().zip(&without).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn rejects_unnormalized_and_non_finite_tracks() {
        let mut store = ParamStore::new(DType::F64, 3);
        let net = WavebenderNet::new(small(), &mut store, "net").unwrap();
        let raw = ParameterTrack::new(Array2::zeros((4, 5)), vec![false; 4], 86.0, false, TrackMeta::default()).unwrap();
        assert!(matches!(net.forward(&raw), Err(Error::NormalizationState(_))));
        let ok = ParameterTrack::new(Array2::zeros((4, 5)), vec![false; 4], 86.0, true, TrackMeta::default()).unwrap();
        let mel = net.forward(&ok).unwrap();
        assert_eq!(mel.bins.dim(), (4, 12));
    }

    #[test]
    fn frame_tensor_round_trip() {
        let m = Array2::from_shape_fn((5, 3), |(t, c)| (t * 10 + c) as f64);
        let t = frames_to_tensor(&m, DType::F64).unwrap();
        assert_eq!(t.dims(), &[1, 3, 5]);
        assert_eq!(tensor_to_frames(&t.squeeze(0).unwrap()).unwrap(), m);
    }
}
