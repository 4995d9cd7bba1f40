//! Per-feature z-score normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::track::{Feature, ParameterTrack, N_FEATURES};

pub const STD_FLOOR: f64 = 1e-8;

/// Training-set mean and population standard deviation of each feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl NormalizationStats {
    /// Pooled statistics over every frame of every track (Welford updates in
    /// corpus order, so the result does not depend on how the corpus was
    /// produced).
    pub fn fit(corpus: &[ParameterTrack]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput("cannot fit normalization on an empty corpus".into()));
        }
        if corpus.iter().any(ParameterTrack::is_normalized) {
            return Err(Error::NormalizationState("normalized; fit needs raw tracks"));
        }
        let mut count = 0usize;
        let mut mean = [0.0; N_FEATURES];
        let mut m2 = [0.0; N_FEATURES];
        for track in corpus {
            for row in track.values().rows() {
                count += 1;
                for c in 0..N_FEATURES {
                    let delta = row[c] - mean[c];
                    mean[c] += delta / count as f64;
                    m2[c] += delta * (row[c] - mean[c]);
                }
            }
        }
        if count < 2 {
            return Err(Error::InvalidInput(format!(
                "normalization needs at least 2 pooled frames, got {count}"
            )));
        }
        let std = m2.map(|v| (v / count as f64).sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid normalization stats {self:?}")));
        }
        Ok(())
    }

    /// Short content hash used to tie tracks, checkpoints and predictors together.
    pub fn id(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.mean.iter().chain(&self.std) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn z(&self, feature: Feature, value: f64) -> f64 {
        let i = feature.index();
        (value - self.mean[i]) / self.std[i]
    }

    pub fn unz(&self, feature: Feature, value: f64) -> f64 {
        let i = feature.index();
        value * self.std[i] + self.mean[i]
    }

    pub fn normalize(&self, track: &ParameterTrack) -> Result<ParameterTrack> {
        if track.is_normalized() {
            return Err(Error::NormalizationState("normalized"));
        }
        let mut out = track.clone();
        for f in Feature::ALL {
            out.column_mut(f).mapv_inplace(|v| self.z(f, v));
        }
        out.set_normalized(true, Some(self.id()));
        Ok(out)
    }

    pub fn denormalize(&self, track: &ParameterTrack) -> Result<ParameterTrack> {
        if !track.is_normalized() {
            return Err(Error::NormalizationState("denormalized"));
        }
        if let Some(id) = &track.meta().stats_id {
            if *id != self.id() {
                return Err(Error::FingerprintMismatch {
                    expected: self.id(),
                    found: id.clone(),
                });
            }
        }
        let mut out = track.clone();
        for f in Feature::ALL {
            out.column_mut(f).mapv_inplace(|v| self.unz(f, v));
        }
        out.set_normalized(false, None);
        Ok(out)
    }

    /// `mean ± k·std` per feature.
    pub fn range(&self, feature: Feature, k: f64) -> (f64, f64) {
        let i = feature.index();
        (self.mean[i] - k * self.std[i], self.mean[i] + k * self.std[i])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let doc = StatsDocument {
            id: self.id(),
            features: Feature::ALL
                .iter()
                .map(|&f| FeatureStats {
                    name: f.column().to_owned(),
                    mean: self.mean[f.index()],
                    std: self.std[f.index()],
                })
                .collect(),
        };
        std::fs::write(path, toml::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: StatsDocument = toml::from_str(&std::fs::read_to_string(path)?)?;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for f in Feature::ALL {
            let entry = doc
                .features
                .iter()
                .find(|e| e.name == f.column())
                .ok_or_else(|| Error::InvalidInput(format!("stats document lacks {}", f.column())))?;
            mean[f.index()] = entry.mean;
            std[f.index()] = entry.std;
        }
        let stats = Self { mean, std };
        stats.validate()?;
        if stats.id() != doc.id {
            return Err(Error::FingerprintMismatch {
                expected: doc.id,
                found: stats.id(),
            });
        }
        Ok(stats)
    }
}

#[derive(Serialize, Deserialize)]
struct StatsDocument {
    id: String,
    features: Vec<FeatureStats>,
}

#[derive(Serialize, Deserialize)]
struct FeatureStats {
    name: String,
    mean: f64,
    std: f64,
}
