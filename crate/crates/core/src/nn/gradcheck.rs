//! Central finite-difference check of the network's analytic gradients.

use candle_core::{DType, Tensor};

use super::loss::xsigmoid_loss;
use super::{ParamStore, WavebenderNet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub max_abs_gradient: f64,
}

/// Compares `∂ xsigmoid(net(x), target) / ∂θ` with `(L(θ+ε) − L(θ−ε)) / 2ε`
/// for every parameter entry. Entries where both gradients are below `floor`
/// are counted as exact.
pub fn gradient_check(
    net: &WavebenderNet,
    store: &ParamStore,
    input: &Tensor,
    target: &Tensor,
    eps: f64,
) -> Result<GradCheckReport> {
    if store.dtype() != DType::F64 {
        return Err(Error::InvalidConfig("gradient check needs an f64 parameter store".into()));
    }
    let loss_of = || -> Result<f64> {
        let y = net.forward_tensor(input, true)?;
        Ok(xsigmoid_loss(&y, target)?.to_scalar::<f64>()?)
    };
    let y = net.forward_tensor(input, true)?;
    let grads = xsigmoid_loss(&y, target)?.backward()?;
    let floor = 1e-9;
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        max_abs_gradient: 0.0,
    };
    for (name, var) in store.vars() {
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; var.elem_count()],
        };
        let original = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let mut probe = original.clone();
        for i in 0..original.len() {
            probe[i] = original[i] + eps;
            var.set(&Tensor::from_vec(probe.clone(), var.shape(), var.device())?)?;
            let plus = loss_of()?;
            probe[i] = original[i] - eps;
            var.set(&Tensor::from_vec(probe.clone(), var.shape(), var.device())?)?;
            let minus = loss_of()?;
            probe[i] = original[i];
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            let rel = if scale < floor { 0.0 } else { (a - numeric).abs() / scale };
            if !rel.is_finite() {
                return Err(Error::NonFiniteLoss(format!("gradient check on {name}[{i}]")));
            }
            report.max_relative_error = report.max_relative_error.max(rel);
            report.max_abs_gradient = report.max_abs_gradient.max(a.abs());
            report.checked += 1;
        }
        var.set(&Tensor::from_vec(original, var.shape(), var.device())?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::WavebenderNetConfig;
    use candle_core::Device;

    #[test]
    fn tiny_net_passes() {
        let mut store = ParamStore::new(DType::F64, 11);
        let net = WavebenderNet::new(WavebenderNetConfig::tiny(4), &mut store, "net").unwrap();
        let x = Tensor::from_vec((0..2 * 6 * 10).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect::<Vec<_>>(), (2, 6, 10), &Device::Cpu).unwrap();
        let t = Tensor::from_vec((0..80).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<_>>(), (2, 4, 10), &Device::Cpu).unwrap();
        let report = gradient_check(&net, &store, &x, &t, 1e-4).unwrap();
        assert!(report.max_relative_error < 1e-3, "{report:?}");
        assert_eq!(report.checked, store.num_parameters());
    }
}
