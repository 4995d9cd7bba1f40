//! XSigmoid regression loss, LS-GAN losses and the joint objective.
//!
//! Each loss exists twice: on tensors (differentiable, used in training) and
//! on plain slices (used for reporting and as a cross-check).

use candle_core::Tensor;

use crate::error::{Error, Result};

/// `ℓ(e) = e·tanh(e/2)`.
pub fn xsigmoid(e: f64) -> f64 {
    e * (0.5 * e).tanh()
}

/// `dℓ/de = tanh(e/2) + (e/2)·sech²(e/2)`.
pub fn xsigmoid_grad(e: f64) -> f64 {
    let t = (0.5 * e).tanh();
    t + 0.5 * e * (1.0 - t * t)
}

pub fn xsigmoid_loss_slice(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} entries, target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::InvalidInput("empty loss input".into()));
    }
    let sum: f64 = prediction.iter().zip(target).map(|(p, t)| xsigmoid(p - t)).sum();
    Ok(sum / prediction.len() as f64)
}

/// Mean XSigmoid over all entries.
pub fn xsigmoid_loss(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    if prediction.dims() != target.dims() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            prediction.dims(),
            target.dims()
        )));
    }
    let e = (prediction - target)?;
    Ok((&e * (&e * 0.5)?.tanh()?)?.mean_all()?)
}

/// Per-item XSigmoid, `(B, ...) -> (B,)`.
pub fn xsigmoid_per_item(prediction: &Tensor, target: &Tensor) -> Result<Tensor> {
    let e = (prediction - target)?;
    super::per_item_mean(&(&e * (&e * 0.5)?.tanh()?)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsganLosses {
    pub d_loss: f64,
    pub g_loss: f64,
}

pub fn lsgan_losses_slice(disc_real: &[f64], disc_fake: &[f64]) -> Result<LsganLosses> {
    if disc_real.is_empty() || disc_fake.is_empty() {
        return Err(Error::InvalidInput("empty discriminator scores".into()));
    }
    if disc_real.iter().chain(disc_fake).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite discriminator scores".into()));
    }
    let mean = |xs: &[f64], label: f64| xs.iter().map(|v| (v - label).powi(2)).sum::<f64>() / xs.len() as f64;
    Ok(LsganLosses {
        d_loss: 0.5 * mean(disc_real, 1.0) + 0.5 * mean(disc_fake, 0.0),
        g_loss: 0.5 * mean(disc_fake, 1.0),
    })
}

/// `½·mean((real−1)²) + ½·mean(fake²)`.
pub fn lsgan_d_loss(disc_real: &Tensor, disc_fake: &Tensor) -> Result<Tensor> {
    let real = (disc_real - 1.0)?.sqr()?.mean_all()?;
    let fake = disc_fake.sqr()?.mean_all()?;
    Ok(((real + fake)? * 0.5)?)
}

/// `½·mean((fake−1)²)`.
pub fn lsgan_g_loss(disc_fake: &Tensor) -> Result<Tensor> {
    Ok(((disc_fake - 1.0)?.sqr()?.mean_all()? * 0.5)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub recon_pre: f64,
    pub recon_post: f64,
    pub adversarial: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            recon_pre: 1.0,
            recon_post: 1.0,
            adversarial: 1.0,
        }
    }
}

pub fn composite_objective_slice(
    mel_pre: &[f64],
    mel_post: &[f64],
    target: &[f64],
    g_loss: f64,
    weights: ObjectiveWeights,
) -> Result<f64> {
    let pre = xsigmoid_loss_slice(mel_pre, target)?;
    let post = xsigmoid_loss_slice(mel_post, target)?;
    Ok(weights.recon_pre * pre + weights.recon_post * post + weights.adversarial * g_loss)
}

/// Generator-side objective; the returned pieces are
/// `(total, recon_pre, recon_post)`.
pub fn composite_objective(
    mel_pre: &Tensor,
    mel_post: &Tensor,
    target: &Tensor,
    g_loss: &Tensor,
    weights: ObjectiveWeights,
) -> Result<(Tensor, Tensor, Tensor)> {
    let pre = xsigmoid_loss(mel_pre, target)?;
    let post = xsigmoid_loss(mel_post, target)?;
    let total = ((&pre * weights.recon_pre)? + (&post * weights.recon_post)?)?;
    let total = (total + (g_loss * weights.adversarial)?)?;
    Ok((total, pre, post))
}
