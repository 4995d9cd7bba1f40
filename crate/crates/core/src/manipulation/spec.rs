use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{Feature, ParameterTrack};

/// Formant margin enforced by the coupling projection.
pub const FORMANT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    Keep,
    /// Framewise multiplication. f0 is scaled in Hz.
    Scale(f64),
    /// Full trajectory in track units (log Hz for f0).
    Replace(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingPolicy {
    PredictF2FromF1,
    PredictF1FromF2,
    #[default]
    Independent,
}

impl CouplingPolicy {
    /// `(driver, dependent)` formants.
    pub fn roles(self) -> Option<(Feature, Feature)> {
        match self {
            CouplingPolicy::PredictF2FromF1 => Some((Feature::F1, Feature::F2)),
            CouplingPolicy::PredictF1FromF2 => Some((Feature::F2, Feature::F1)),
            CouplingPolicy::Independent => None,
        }
    }
}

/// `{"f0": {"scale": 1.2}, "f2": "keep", "coupling_policy": "independent"}`.
/// Features not mentioned are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ManipulationSpec {
    #[serde(default)]
    pub coupling_policy: CouplingPolicy,
    #[serde(flatten)]
    pub actions: BTreeMap<Feature, Action>,
}

impl ManipulationSpec {
    pub fn keep() -> Self {
        Self::default()
    }

    /// One feature scaled by `m`; formant scalings get the matching predict
    /// policy.
    pub fn scale(feature: Feature, m: f64) -> Self {
        let coupling_policy = match feature {
            Feature::F1 => CouplingPolicy::PredictF2FromF1,
            Feature::F2 => CouplingPolicy::PredictF1FromF2,
            _ => CouplingPolicy::Independent,
        };
        Self {
            coupling_policy,
            actions: BTreeMap::from([(feature, Action::Scale(m))]),
        }
    }

    pub fn with_policy(mut self, policy: CouplingPolicy) -> Self {
        self.coupling_policy = policy;
        self
    }

    pub fn action(&self, feature: Feature) -> &Action {
        static KEEP: Action = Action::Keep;
        self.actions.get(&feature).unwrap_or(&KEEP)
    }

    pub fn is_keep(&self) -> bool {
        self.actions.values().all(|a| *a == Action::Keep)
    }

    pub fn validate(&self) -> Result<()> {
        for (f, a) in &self.actions {
            match a {
                Action::Scale(m) if !(m.is_finite() && *m > 0.0) => {
                    return Err(Error::Manipulation(format!("scale factor for {f} must be positive and finite, got {m}")));
                }
                Action::Replace(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(Error::Manipulation(format!("replacement trajectory for {f} has non-finite values")));
                }
                _ => {}
            }
        }
        if let Some((_, dependent)) = self.coupling_policy.roles() {
            if *self.action(dependent) != Action::Keep {
                return Err(Error::Manipulation(format!(
                    "{dependent} is predicted under {:?} and cannot also be manipulated directly",
                    self.coupling_policy
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Manipulation(format!("malformed spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Every `*.json` spec in `dir`, sorted by file name.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Self)>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                Ok((name, Self::load(&p)?))
            })
            .collect()
    }
}

/// Desired trajectory for a denormalized track. Kept features are copied
/// bit for bit and voicing is preserved.
pub fn build_desired(track: &ParameterTrack, spec: &ManipulationSpec) -> Result<ParameterTrack> {
    if track.is_normalized() {
        return Err(Error::NormalizationState("normalized; manipulations apply to raw tracks"));
    }
    spec.validate()?;
    let mut out = track.clone();
    let mut formants_touched = false;
    for (&feature, action) in &spec.actions {
        let column: Vec<f64> = match action {
            Action::Keep => continue,
            Action::Scale(m) if feature == Feature::F0 => {
                let shift = m.ln();
                track.column(feature).iter().map(|v| v + shift).collect()
            }
            Action::Scale(m) => track.column(feature).iter().map(|v| v * m).collect(),
            Action::Replace(values) => {
                if values.len() != track.n_frames() {
                    return Err(Error::Manipulation(format!(
                        "replacement for {feature} has {} frames, the track has {}",
                        values.len(),
                        track.n_frames()
                    )));
                }
                values.clone()
            }
        };
        formants_touched |= feature.is_formant();
        out = out.with_column(feature, &column)?;
    }
    if formants_touched && spec.coupling_policy == CouplingPolicy::Independent {
        let bad = out.formant_order_violations(0.0);
        if !bad.is_empty() {
            let shown: Vec<String> = bad.iter().take(20).map(usize::to_string).collect();
            return Err(Error::Manipulation(format!(
                "F2 < F1 on {} voiced frame(s): {}{}",
                bad.len(),
                shown.join(", "),
                if bad.len() > 20 { ", ..." } else { "" }
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackMeta;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn track(t: usize) -> ParameterTrack {
        let values = Array2::from_shape_fn((t, 5), |(i, c)| match c {
            0 => 500.0 + 10.0 * (i % 7) as f64,
            1 => 1500.0 + 20.0 * (i % 5) as f64,
            2 => (110.0f64).ln() + 0.01 * (i % 3) as f64 - 0.01,
            3 => 2000.0,
            _ => -0.002,
        });
        ParameterTrack::new(values, (0..t).map(|i| i % 4 != 0).collect(), 86.13, false, TrackMeta::default()).unwrap()
    }

    #[test]
    fn json_shape() {
        let spec = ManipulationSpec::from_json(r#"{"f0": {"scale": 1.2}, "f2": "keep"}"#).unwrap();
        assert_eq!(spec.action(Feature::F0), &Action::Scale(1.2));
        assert_eq!(spec.coupling_policy, CouplingPolicy::Independent);
        let again = ManipulationSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, again);
        assert!(ManipulationSpec::from_json(r#"{"f1": {"scale": 0}}"#).is_err());
        assert!(ManipulationSpec::from_json(r#"{"f9": "keep"}"#).is_err());
        assert!(ManipulationSpec::from_json(r#"{"coupling_policy": "predict_f2_from_f1", "f2": {"scale": 1.1}}"#).is_err());
    }

    #[test]
    fn keep_and_unit_scale_are_bit_exact() {
        let t = track(50);
        assert_eq!(build_desired(&t, &ManipulationSpec::keep()).unwrap(), t);
        for f in Feature::ALL {
            assert_eq!(build_desired(&t, &ManipulationSpec::scale(f, 1.0)).unwrap(), t, "{f}");
        }
    }

    #[test]
    fn f0_scaling_is_in_hz() {
        let t = track(30);
        let out = build_desired(&t, &ManipulationSpec::scale(Feature::F0, 1.2)).unwrap();
        let median = out.median_voiced_log_f0().unwrap().exp();
        assert!((median - 132.0).abs() < 1e-9, "{median}");
    }

    #[test]
    fn crossing_formants_are_rejected_when_independent() {
        let t = track(12);
        let spec = ManipulationSpec::scale(Feature::F1, 3.5).with_policy(CouplingPolicy::Independent);
        let err = build_desired(&t, &spec).unwrap_err().to_string();
        assert!(err.contains("F2 < F1"), "{err}");
        // frame 0 is unvoiced and never listed
        assert!(err.contains(": 1, 2, 3, 5"), "{err}");
        assert!(build_desired(&t, &ManipulationSpec::scale(Feature::F1, 3.5)).is_ok());
    }

    #[test]
    fn replacement_length_is_checked() {
        let t = track(10);
        let spec = ManipulationSpec {
            actions: BTreeMap::from([(Feature::Centroid, Action::Replace(vec![1000.0; 9]))]),
            ..Default::default()
        };
        assert!(build_desired(&t, &spec).is_err());
    }

    proptest! {
        #[test]
        fn scale_then_inverse_restores(m in 0.5f64..2.0, fi in 0usize..5) {
            let f = Feature::ALL[fi];
            let t = track(40);
            let once = build_desired(&t, &ManipulationSpec::scale(f, m)).unwrap();
            let back = build_desired(&once, &ManipulationSpec::scale(f, 1.0 / m)).unwrap();
            for (a, b) in back.values().iter().zip(t.values()) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
            for g in Feature::ALL.into_iter().filter(|&g| g != f) {
                prop_assert_eq!(back.column(g), t.column(g));
            }
            prop_assert_eq!(back.voicing(), t.voicing());
        }
    }
}
