//! Time-aligned speech-parameter tracks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 5;

/// The five controllable speech parameters, in matrix column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    F1,
    F2,
    F0,
    Centroid,
    Slope,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::F1,
        Feature::F2,
        Feature::F0,
        Feature::Centroid,
        Feature::Slope,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::F1 => "f1",
            Feature::F2 => "f2",
            Feature::F0 => "f0",
            Feature::Centroid => "centroid",
            Feature::Slope => "slope",
        }
    }

    /// Column header used by the track text format.
    pub fn column(self) -> &'static str {
        match self {
            Feature::F1 => "f1_hz",
            Feature::F2 => "f2_hz",
            Feature::F0 => "log_f0",
            Feature::Centroid => "centroid_hz",
            Feature::Slope => "slope_db_per_hz",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Feature::F1 | Feature::F2 | Feature::Centroid => "Hz",
            Feature::F0 => "log Hz",
            Feature::Slope => "dB/Hz",
        }
    }

    pub fn is_formant(self) -> bool {
        matches!(self, Feature::F1 | Feature::F2)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s || f.column() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown feature '{s}' (expected one of f1, f2, f0, centroid, slope)"
                ))
            })
    }
}

/// Header of the columnar track format. Voicing sits between log-f0 and the
/// spectral features.
pub const CSV_HEADER: [&str; 6] = [
    "f1_hz",
    "f2_hz",
    "log_f0",
    "voicing",
    "centroid_hz",
    "slope_db_per_hz",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackMeta {
    pub sample_rate: u32,
    /// Identifier of the [`NormalizationStats`](crate::norm::NormalizationStats)
    /// the track was normalized with, if any.
    pub stats_id: Option<String>,
    /// True when no frame was voiced and log-f0 was filled with a fallback.
    pub f0_fallback: bool,
}

/// `T × 5` feature matrix plus per-frame voicing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTrack {
    values: Array2<f64>,
    voicing: Vec<bool>,
    frame_rate: f64,
    normalized: bool,
    meta: TrackMeta,
}

impl ParameterTrack {
    pub fn new(
        values: Array2<f64>,
        voicing: Vec<bool>,
        frame_rate: f64,
        normalized: bool,
        meta: TrackMeta,
    ) -> Result<Self> {
        if values.ncols() != N_FEATURES {
            return Err(Error::ShapeMismatch(format!(
                "track needs {N_FEATURES} feature columns, got {}",
                values.ncols()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidInput("track has no frames".into()));
        }
        if voicing.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} voicing flags for {} frames",
                voicing.len(),
                values.nrows()
            )));
        }
        if let Some(((t, c), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at frame {t}, column {}",
                Feature::ALL[c]
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::InvalidInput(format!("invalid frame rate {frame_rate}")));
        }
        Ok(Self {
            values,
            voicing,
            frame_rate,
            normalized,
            meta,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn voicing(&self) -> &[bool] {
        &self.voicing
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn meta(&self) -> &TrackMeta {
        &self.meta
    }

    pub fn column(&self, feature: Feature) -> ArrayView1<'_, f64> {
        self.values.column(feature.index())
    }

    pub(crate) fn column_mut(&mut self, feature: Feature) -> ArrayViewMut1<'_, f64> {
        self.values.column_mut(feature.index())
    }

    pub(crate) fn set_normalized(&mut self, normalized: bool, stats_id: Option<String>) {
        self.normalized = normalized;
        self.meta.stats_id = stats_id;
    }

    /// Copy with one column replaced.
    pub fn with_column(&self, feature: Feature, column: &[f64]) -> Result<Self> {
        if column.len() != self.n_frames() {
            return Err(Error::ShapeMismatch(format!(
                "replacement for {feature} has {} frames, track has {}",
                column.len(),
                self.n_frames()
            )));
        }
        let mut values = self.values.clone();
        for (dst, src) in values.column_mut(feature.index()).iter_mut().zip(column) {
            *dst = *src;
        }
        Self::new(values, self.voicing.clone(), self.frame_rate, self.normalized, self.meta.clone())
    }

    /// Frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames() {
            return Err(Error::InvalidInput(format!(
                "invalid frame range {start}..{end} for {} frames",
                self.n_frames()
            )));
        }
        Self::new(
            self.values.slice(ndarray::s![start..end, ..]).to_owned(),
            self.voicing[start..end].to_vec(),
            self.frame_rate,
            self.normalized,
            self.meta.clone(),
        )
    }

    /// Voiced-frame median of log-f0, `None` when no frame is voiced.
    pub fn median_voiced_log_f0(&self) -> Option<f64> {
        let mut voiced: Vec<f64> = self
            .column(Feature::F0)
            .iter()
            .zip(&self.voicing)
            .filter(|(_, &v)| v)
            .map(|(f, _)| *f)
            .collect();
        median(&mut voiced)
    }

    /// Frames where F2 < F1 while voiced. Only meaningful on denormalized tracks.
    pub fn formant_order_violations(&self, margin: f64) -> Vec<usize> {
        self.values
            .axis_iter(Axis(0))
            .zip(&self.voicing)
            .enumerate()
            .filter(|(_, (row, &v))| v && row[Feature::F2.index()] < row[Feature::F1.index()] * (1.0 + margin))
            .map(|(t, _)| t)
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(CSV_HEADER)?;
        for (row, &v) in self.values.axis_iter(Axis(0)).zip(&self.voicing) {
            writer.write_record([
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
                u8::from(v).to_string(),
                row[3].to_string(),
                row[4].to_string(),
            ])?;
        }
        writer.flush()?;
        let sidecar = SidecarMeta {
            frame_rate: self.frame_rate,
            sample_rate: self.meta.sample_rate,
            normalized: self.normalized,
            stats_id: self.meta.stats_id.clone(),
            f0_fallback: self.meta.f0_fallback,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: SidecarMeta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::InvalidInput(format!(
                "unexpected track header {header:?}, expected {CSV_HEADER:?}"
            )));
        }
        let mut flat = Vec::new();
        let mut voicing = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i].trim().parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("row {}, column {}: {e}", line + 1, CSV_HEADER[i]))
                })
            };
            flat.extend([parse(0)?, parse(1)?, parse(2)?, parse(4)?, parse(5)?]);
            voicing.push(match record[3].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "row {}: voicing must be 0 or 1, got '{other}'",
                        line + 1
                    )))
                }
            });
        }
        let values = Array2::from_shape_vec((voicing.len(), N_FEATURES), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(
            values,
            voicing,
            sidecar.frame_rate,
            sidecar.normalized,
            TrackMeta {
                sample_rate: sidecar.sample_rate,
                stats_id: sidecar.stats_id,
                f0_fallback: sidecar.f0_fallback,
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarMeta {
    frame_rate: f64,
    sample_rate: u32,
    normalized: bool,
    stats_id: Option<String>,
    #[serde(default)]
    f0_fallback: bool,
}

/// `track.csv` → `track.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> ParameterTrack {
        ParameterTrack::new(
            array![
                [500.0, 1500.0, 4.7, 2000.0, -0.002],
                [520.0, 1480.0, 4.71, 2100.5, -0.0021],
                [510.0, 1490.0, 4.72, 1999.25, -0.00205]
            ],
            vec![true, false, true],
            86.1328125,
            false,
            TrackMeta {
                sample_rate: 22_050,
                stats_id: None,
                f0_fallback: false,
            },
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let track = sample();
        track.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f1_hz,f2_hz,log_f0,voicing,centroid_hz,slope_db_per_hz\n"));
        assert!(dir.path().join("t.meta.json").exists());
        let back = ParameterTrack::read_csv(&path).unwrap();
        assert_eq!(back.voicing(), track.voicing());
        for (a, b) in back.values().iter().zip(track.values()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
        assert_eq!(back.meta(), track.meta());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ParameterTrack::new(Array2::zeros((0, 5)), vec![], 80.0, false, TrackMeta::default()).is_err());
        assert!(ParameterTrack::new(Array2::zeros((2, 4)), vec![true; 2], 80.0, false, TrackMeta::default()).is_err());
        assert!(ParameterTrack::new(Array2::zeros((2, 5)), vec![true], 80.0, false, TrackMeta::default()).is_err());
    }

    #[test]
    fn parses_feature_names() {
        assert_eq!("f0".parse::<Feature>().unwrap(), Feature::F0);
        assert_eq!("slope_db_per_hz".parse::<Feature>().unwrap(), Feature::Slope);
        assert!("jitter".parse::<Feature>().is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
