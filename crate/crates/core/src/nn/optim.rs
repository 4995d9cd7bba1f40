//! Adam with serializable state and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `base_lr·½(1 + cos(π·t/T))`, clamped to zero after `T`.
pub fn cosine_lr(base_lr: f64, step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let progress = (step.min(total_steps) as f64) / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Moment estimates for one parameter group. Parameters without a gradient
/// in a step are left untouched and do not advance their moments.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    params: Vec<(String, Var)>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let zeros = |p: &Var| Tensor::zeros(p.shape(), DType::F64, p.device());
        let m = params.iter().map(|(_, p)| zeros(p)).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self {
            config,
            params,
            m,
            v,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Moments are kept in f64 regardless of the parameter dtype.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients reference the forward graph; the moments must not
            let g = g.detach().to_dtype(DType::F64)?;
            self.m[i] = ((&self.m[i] * beta1)? + (&g * (1.0 - beta1))?)?;
            self.v[i] = ((&self.v[i] * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&self.m[i] / bc1)?;
            let v_hat = (&self.v[i] / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            let current = var.as_tensor().detach().to_dtype(DType::F64)?;
            let next = (current - (update * lr)?)?;
            var.set(&next.to_dtype(var.dtype())?)?;
        }
        Ok(())
    }

    /// Named moment tensors (`{name}.m`, `{name}.v`) plus the step counter.
    pub fn state(&self) -> Result<(BTreeMap<String, Tensor>, u64)> {
        let mut out = BTreeMap::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            out.insert(format!("{name}.m"), self.m[i].clone());
            out.insert(format!("{name}.v"), self.v[i].clone());
        }
        Ok((out, self.step))
    }

    pub fn load_state(&mut self, tensors: &std::collections::HashMap<String, Tensor>, step: u64) -> Result<()> {
        for (i, (name, var)) in self.params.iter().enumerate() {
            for (suffix, slot) in [("m", &mut self.m[i]), ("v", &mut self.v[i])] {
                let t = tensors
                    .get(&format!("{name}.{suffix}"))
                    .ok_or_else(|| Error::InvalidInput(format!("optimizer state lacks {name}.{suffix}")))?;
                if t.dims() != var.dims() {
                    return Err(Error::ShapeMismatch(format!("optimizer state for {name} has shape {:?}", t.dims())));
                }
                *slot = t.to_dtype(DType::F64)?;
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(2e-4, 0, 100), 2e-4);
        assert!(cosine_lr(2e-4, 100, 100).abs() < 1e-9);
        assert!((cosine_lr(2e-4, 50, 100) - 1e-4).abs() < 1e-15);
        assert!(cosine_lr(2e-4, 500, 100).abs() < 1e-9);
    }

    #[test]
    fn matches_scalar_reference() {
        let var = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &Device::Cpu).unwrap()).unwrap();
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(vec![("w".into(), var.clone())], cfg).unwrap();
        let (mut x, mut m, mut v) = ([1.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
        for t in 1..=5 {
            let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            adam.step(&grads, 0.1).unwrap();
            for i in 0..2 {
                let g = 2.0 * x[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let mh = m[i] / (1.0 - cfg.beta1.powi(t));
                let vh = v[i] / (1.0 - cfg.beta2.powi(t));
                x[i] -= 0.1 * mh / (vh.sqrt() + cfg.eps);
            }
        }
        let got = var.as_tensor().to_vec1::<f64>().unwrap();
        for i in 0..2 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }
}
