//! LPC analysis and formant picking from predictor-polynomial roots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormantTracker {
    pub pre_emphasis: f64,
    /// Candidates wider than this are discarded.
    pub max_bandwidth_hz: f64,
    /// Roots below this frequency model spectral tilt, not resonances.
    pub min_frequency_hz: f64,
}

impl Default for FormantTracker {
    fn default() -> Self {
        Self {
            pre_emphasis: 0.97,
            max_bandwidth_hz: 400.0,
            min_frequency_hz: 50.0,
        }
    }
}

/// `2 + sample_rate/1000`, rounded.
pub fn lpc_order(sample_rate: u32) -> usize {
    2 + (sample_rate as f64 / 1000.0).round() as usize
}

/// Levinson-Durbin recursion. Returns `[1, a1, .., ap]` such that the
/// prediction error filter is `A(z) = 1 + Σ a_k z^{-k}`, or `None` when the
/// autocorrelation is degenerate (silent frame).
pub fn levinson_durbin(autocorr: &[f64], order: usize) -> Option<Vec<f64>> {
    if autocorr.len() <= order || autocorr[0] <= 0.0 {
        return None;
    }
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = autocorr[0];
    for i in 1..=order {
        let mut acc = autocorr[i];
        for j in 1..i {
            acc += a[j] * autocorr[i - j];
        }
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 || !err.is_finite() {
            return None;
        }
    }
    Some(a)
}

pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| {
            if lag >= x.len() {
                0.0
            } else {
                x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum()
            }
        })
        .collect()
}

/// Schur sweeps before a frame's roots are given up on.
const MAX_SCHUR_ITERATIONS: usize = 1000;

/// Complex roots of `z^p + a1 z^{p-1} + .. + ap` via companion-matrix
/// eigenvalues; empty when the QR iteration does not converge.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let p = coeffs.len() - 1;
    if p == 0 {
        return Vec::new();
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        companion[(0, j)] = -coeffs[j + 1] / coeffs[0];
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    match companion.try_schur(f64::EPSILON, MAX_SCHUR_ITERATIONS) {
        Some(schur) => schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect(),
        None => Vec::new(),
    }
}

impl FormantTracker {
    /// Returns the two lowest formant candidates `(F1, F2)` in Hz for one frame,
    /// or `None` when fewer than two qualify.
    pub fn formants(&self, frame: &[f64], sample_rate: u32, window: &[f64]) -> Option<(f64, f64)> {
        let sr = sample_rate as f64;
        let mut emphasized = Vec::with_capacity(frame.len());
        let mut prev = 0.0;
        for (i, &s) in frame.iter().enumerate() {
            let v = if i == 0 { s } else { s - self.pre_emphasis * prev };
            emphasized.push(v * window[i]);
            prev = s;
        }
        let order = lpc_order(sample_rate);
        let mut r = autocorrelation(&emphasized, order);
        // Relative white-noise correction keeps the recursion stable and gain-invariant.
        r[0] *= 1.0 + 1e-9;
        let a = levinson_durbin(&r, order)?;
        let mut candidates: Vec<f64> = polynomial_roots(&a)
            .into_iter()
            .filter(|&(_, im)| im > 0.0)
            .filter_map(|(re, im)| {
                let freq = im.atan2(re) * sr / (2.0 * std::f64::consts::PI);
                let radius = (re * re + im * im).sqrt();
                let bandwidth = -radius.ln() * sr / std::f64::consts::PI;
                (freq > self.min_frequency_hz
                    && freq < sr / 2.0 - self.min_frequency_hz
                    && bandwidth < self.max_bandwidth_hz)
                    .then_some(freq)
            })
            .collect();
        candidates.sort_by(|a, b| a.total_cmp(b));
        match candidates.as_slice() {
            [f1, f2, ..] => Some((*f1, *f2)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levinson_recovers_ar2_process() {
        // x[n] = 1.3 x[n-1] - 0.6 x[n-2] + e[n]; exact autocorrelation by Yule-Walker.
        let (a1, a2) = (1.3, -0.6);
        let r1_over_r0 = a1 / (1.0 - a2);
        let r2_over_r0 = a1 * r1_over_r0 + a2;
        let a = levinson_durbin(&[1.0, r1_over_r0, r2_over_r0], 2).unwrap();
        assert!((a[1] + a1).abs() < 1e-12);
        assert!((a[2] + a2).abs() < 1e-12);
    }

    #[test]
    fn roots_of_known_quadratic() {
        // z^2 - 3z + 2 = (z-1)(z-2)
        let mut roots = polynomial_roots(&[1.0, -3.0, 2.0]);
        roots.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((roots[0].0 - 1.0).abs() < 1e-12 && roots[0].1.abs() < 1e-12);
        assert!((roots[1].0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn order_follows_sample_rate() {
        assert_eq!(lpc_order(22_050), 24);
        assert_eq!(lpc_order(16_000), 18);
    }

    #[test]
    fn silent_frame_has_no_formants() {
        let w = vec![1.0; 512];
        assert!(FormantTracker::default().formants(&[0.0; 512], 22_050, &w).is_none());
    }
}
