//! Network building blocks on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names; layers hold
//! handles to the same storage, so optimizer updates through the store are
//! seen by every layer.

pub mod gan;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod wavebender;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use gan::{Discriminator, GanConfig, Generator};
pub use wavebender::{WavebenderNet, WavebenderNetConfig};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, scaled.
    FanIn { fan_in: usize, scale: f64 },
    Const(f64),
}

/// Named trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    seed: u64,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            seed,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the named parameter, creating it with `init` on first use.
    /// Initial values depend only on the store seed and the name.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(var) = self.vars.get(name) {
            if var.dims() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    var.dims()
                )));
            }
            return Ok(var.as_tensor().clone());
        }
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(v) => vec![v; count],
            Init::FanIn { fan_in, scale } => {
                let bound = scale / (fan_in.max(1) as f64).sqrt();
                let mut rng = rng_for(self.seed, &[&name]);
                (0..count).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        let tensor = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&tensor)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_owned(), var);
        Ok(handle)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    /// Parameters whose name starts with `prefix`, in name order.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Flattened f64 copy of every parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f64>>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)))
            .collect()
    }

    /// Overwrites parameters present in `tensors`; every parameter must be
    /// covered.
    pub fn load_tensors(&mut self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("weights lack parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: stored {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> Result<HashMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().clone())))
            .collect()
    }

    /// Safetensors archive in the store's dtype.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        candle_core::safetensors::save(&self.to_tensors()?, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        self.load_tensors(&tensors)
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv1d {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::with_scale(store, name, c_in, c_out, kernel, 1.0)
    }

    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        scale: f64,
    ) -> Result<Self> {
        let fan_in = c_in * kernel;
        Ok(Self {
            weight: store.get(&format!("{name}.weight"), &[c_out, c_in, kernel], Init::FanIn { fan_in, scale })?,
            bias: store.get(&format!("{name}.bias"), &[c_out], Init::FanIn { fan_in, scale })?,
            padding: kernel / 2,
        })
    }

    /// `(B, C_in, T) -> (B, C_out, T)`, zero "same" padding.
    ///
    /// Written as unfold plus matmul: candle's conv1d kernel gradient sums
    /// the batch incorrectly once `B > 1`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c_in, t) = x.dims3()?;
        let (c_out, _, k) = self.weight.dims3()?;
        let cols = if k == 1 {
            x.clone()
        } else {
            let padded = x.pad_with_zeros(2, self.padding, self.padding)?;
            let taps = (0..k).map(|j| padded.narrow(2, j, t)).collect::<candle_core::Result<Vec<_>>>()?;
            Tensor::stack(&taps, 2)?.reshape((b, c_in * k, t))?
        };
        let w = self.weight.reshape((c_out, c_in * k))?;
        let y = w.broadcast_matmul(&cols)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        scale: f64,
    ) -> Result<Self> {
        let fan_in = c_in * 9;
        Ok(Self {
            weight: store.get(&format!("{name}.weight"), &[c_out, c_in, 3, 3], Init::FanIn { fan_in, scale })?,
            bias: store.get(&format!("{name}.bias"), &[c_out], Init::FanIn { fan_in, scale })?,
            stride,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// 3×3 kernel, padding 1: `(B, C_in, H, W) -> (B, C_out, ⌈H/s⌉, ⌈W/s⌉)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, 1, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Group normalization with statistics taken per frame over the channels of
/// each group. Every frame and every batch item is normalized independently,
/// so outputs do not depend on batch composition, sequence length, or frames
/// outside the receptive field.
#[derive(Debug, Clone)]
pub struct FrameGroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl FrameGroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "{channels} channels cannot be split into {groups} groups"
            )));
        }
        Ok(Self {
            gamma: store.get(&format!("{name}.weight"), &[channels], Init::Const(1.0))?,
            beta: store.get(&format!("{name}.bias"), &[channels], Init::Const(0.0))?,
            groups,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let grouped = x.reshape((b, self.groups, c / self.groups, t))?;
        let mean = grouped.mean_keepdim(2)?;
        let centered = grouped.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape((b, c, t))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, (), 1))?)?
            .broadcast_add(&self.beta.reshape((1, (), 1))?)?)
    }
}

/// Mean over all but the batch dimension, used for per-item loss reporting.
pub(crate) fn per_item_mean(x: &Tensor) -> Result<Tensor> {
    let b = x.dim(0)?;
    Ok(x.reshape((b, ()))?.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new(DType::F64, 3);
        let mut b = ParamStore::new(DType::F64, 3);
        let x = a.get("layer.weight", &[4, 2], Init::FanIn { fan_in: 2, scale: 1.0 }).unwrap();
        b.get("other", &[3], Init::Const(0.0)).unwrap();
        let y = b.get("layer.weight", &[4, 2], Init::FanIn { fan_in: 2, scale: 1.0 }).unwrap();
        assert_eq!(x.to_vec2::<f64>().unwrap(), y.to_vec2::<f64>().unwrap());
        assert!(a.get("layer.weight", &[2, 4], Init::Const(0.0)).is_err());
    }

    #[test]
    fn frame_group_norm_normalizes_each_frame() {
        let mut store = ParamStore::new(DType::F64, 0);
        let gn = FrameGroupNorm::new(&mut store, "gn", 4, 2).unwrap();
        let x = Tensor::from_vec((0..24).map(|v| (v * v) as f64).collect::<Vec<_>>(), (1, 4, 6), &Device::Cpu).unwrap();
        let y = gn.forward(&x).unwrap().to_vec3::<f64>().unwrap();
        for t in 0..6 {
            for g in 0..2 {
                let vals = [y[0][2 * g][t], y[0][2 * g + 1][t]];
                assert!((vals[0] + vals[1]).abs() < 1e-9);
                assert!(((vals[0].powi(2) + vals[1].powi(2)) / 2.0 - 1.0).abs() < 1e-3);
            }
        }
        assert!(FrameGroupNorm::new(&mut store, "bad", 6, 4).is_err());
    }

    #[test]
    fn conv1d_matches_direct_sum_and_its_gradient() {
        let (b, ci, co, t, k) = (3, 2, 4, 9, 5);
        let mut store = ParamStore::new(DType::F64, 5);
        let conv = Conv1d::new(&mut store, "c", ci, co, k).unwrap();
        let x = Tensor::from_vec((0..b * ci * t).map(|v| (v as f64 * 0.37).sin()).collect::<Vec<_>>(), (b, ci, t), &Device::Cpu)
            .unwrap();
        let r = Tensor::from_vec((0..b * co * t).map(|v| (v as f64 * 0.11).cos()).collect::<Vec<_>>(), (b, co, t), &Device::Cpu)
            .unwrap();
        let y = conv.forward(&x).unwrap();
        let grads = (&y * &r).unwrap().sum_all().unwrap().backward().unwrap();
        let gw = grads.get(&conv.weight).unwrap().to_vec3::<f64>().unwrap();
        let (xs, rs, ys) = (x.to_vec3::<f64>().unwrap(), r.to_vec3::<f64>().unwrap(), y.to_vec3::<f64>().unwrap());
        let w = conv.weight.to_vec3::<f64>().unwrap();
        let bias = conv.bias.to_vec1::<f64>().unwrap();
        let tap = |n: usize, i: usize, s: isize| if (0..t as isize).contains(&s) { xs[n][i][s as usize] } else { 0.0 };
        for o in 0..co {
            for n in 0..b {
                for tt in 0..t {
                    let mut direct = bias[o];
                    for i in 0..ci {
                        for j in 0..k {
                            direct += w[o][i][j] * tap(n, i, tt as isize + j as isize - 2);
                        }
                    }
                    assert!((direct - ys[n][o][tt]).abs() < 1e-12);
                }
            }
            for i in 0..ci {
                for j in 0..k {
                    let mut expected = 0.0;
                    for n in 0..b {
                        for tt in 0..t {
                            expected += rs[n][o][tt] * tap(n, i, tt as isize + j as isize - 2);
                        }
                    }
                    assert!((expected - gw[o][i][j]).abs() < 1e-12, "dL/dw[{o},{i},{j}]");
                }
            }
        }
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new(&[-2.0f64, 0.0, 3.0], &Device::Cpu).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).unwrap().to_vec1::<f64>().unwrap(), vec![-0.4, 0.0, 3.0]);
    }

    #[test]
    fn save_load_round_trip() {
        let mut store = ParamStore::new(DType::F32, 1);
        Conv1d::new(&mut store, "c", 2, 3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.safetensors");
        store.save(&path).unwrap();
        let mut other = ParamStore::new(DType::F32, 99);
        Conv1d::new(&mut other, "c", 2, 3, 5).unwrap();
        assert_ne!(other.snapshot().unwrap(), store.snapshot().unwrap());
        other.load(&path).unwrap();
        assert_eq!(other.snapshot().unwrap(), store.snapshot().unwrap());
    }
}
