//! F1/F2 coupling: a small sequence regressor that predicts one formant from
//! the other parameters, and the formant-order projection.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::spec::{CouplingPolicy, FORMANT_MARGIN};
use crate::error::{Error, Result};
use crate::nn::loss::xsigmoid_loss;
use crate::nn::optim::{cosine_lr, Adam, AdamConfig};
use crate::nn::wavebender::track_to_tensor;
use crate::nn::{ParamStore, WavebenderNet, WavebenderNetConfig};
use crate::norm::NormalizationStats;
use crate::seed::rng_for;
use crate::track::{Feature, ParameterTrack};

const META_FILE: &str = "coupling.json";
const WEIGHTS_FILE: &str = "weights.safetensors";

/// Three 64-channel blocks regressing one output channel.
pub fn predictor_net_config() -> WavebenderNetConfig {
    WavebenderNetConfig {
        widths: vec![64, 64, 1],
        groups: 8,
        long_skips: vec![],
        ..WavebenderNetConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingTrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub seed: u64,
    pub net: WavebenderNetConfig,
}

impl Default for CouplingTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            base_lr: 2e-3,
            batch_size: 4,
            crop_frames: 128,
            seed: 0,
            net: predictor_net_config(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMeta {
    pub dependent: Feature,
    pub net: WavebenderNetConfig,
    pub stats: NormalizationStats,
    /// RMSE in Hz on voiced held-out frames, measured after training.
    pub validation_rmse_hz: f64,
    pub validation_frames: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct CouplingPredictor {
    meta: CouplingMeta,
    net: WavebenderNet,
    store: ParamStore,
}

fn masked_input(track: &ParameterTrack, stats: &NormalizationStats, dependent: Feature) -> Result<Tensor> {
    let z = stats.normalize(track)?;
    let z = z.with_column(dependent, &vec![0.0; z.n_frames()])?;
    track_to_tensor(&z, DType::F32)
}

fn target(track: &ParameterTrack, stats: &NormalizationStats, dependent: Feature) -> Result<Tensor> {
    let col: Vec<f32> = track.column(dependent).iter().map(|&v| stats.z(dependent, v) as f32).collect();
    Ok(Tensor::from_vec(col, (1, 1, track.n_frames()), &Device::Cpu)?)
}

fn fingerprint(dependent: Feature, net: &WavebenderNetConfig, stats: &NormalizationStats, store: &ParamStore) -> Result<String> {
    let mut h = Sha256::new();
    h.update(dependent.name());
    h.update(net.fingerprint());
    h.update(stats.id());
    for (name, values) in store.snapshot()? {
        h.update(name.as_bytes());
        for v in values {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

impl CouplingPredictor {
    /// Fits the predictor on raw training tracks; `validation` (or the
    /// training set when empty) provides the recorded RMSE.
    pub fn train(
        dependent: Feature,
        train: &[ParameterTrack],
        validation: &[ParameterTrack],
        stats: &NormalizationStats,
        config: &CouplingTrainConfig,
    ) -> Result<Self> {
        if !dependent.is_formant() {
            return Err(Error::InvalidConfig(format!("coupling predicts a formant, not {dependent}")));
        }
        if train.is_empty() {
            return Err(Error::InvalidInput("coupling predictor needs training tracks".into()));
        }
        if config.net.out_channels() != 1 || config.batch_size == 0 || config.crop_frames == 0 {
            return Err(Error::InvalidConfig("coupling net must have one output; batch and crop must be positive".into()));
        }
        let mut store = ParamStore::new(DType::F32, config.seed);
        let net = WavebenderNet::new(config.net.clone(), &mut store, "coupling")?;
        let mut adam = Adam::new(store.vars_with_prefix("coupling"), AdamConfig::default())?;
        let pairs = train
            .iter()
            .map(|t| Ok((masked_input(t, stats, dependent)?, target(t, stats, dependent)?)))
            .collect::<Result<Vec<_>>>()?;
        let per_epoch = pairs.len().div_ceil(config.batch_size);
        let total = (config.epochs * per_epoch) as u64;
        let mut step = 0u64;
        for epoch in 0..config.epochs {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            let mut rng = rng_for(config.seed, &[&"coupling-shuffle", &epoch]);
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            for chunk in order.chunks(config.batch_size) {
                let len = chunk
                    .iter()
                    .map(|&i| pairs[i].0.dims()[2])
                    .min()
                    .unwrap_or(1)
                    .min(config.crop_frames)
                    .max(1);
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for &i in chunk {
                    let (x, y) = &pairs[i];
                    let start = rng.gen_range(0..=x.dims()[2] - len);
                    xs.push(x.narrow(2, start, len)?);
                    ys.push(y.narrow(2, start, len)?);
                }
                let x = Tensor::cat(&xs, 0)?;
                let y = Tensor::cat(&ys, 0)?;
                let loss = xsigmoid_loss(&net.forward_tensor(&x, true)?, &y)?;
                let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss(format!("coupling predictor at step {step}")));
                }
                adam.step(&loss.backward()?, cosine_lr(config.base_lr, step, total))?;
                step += 1;
            }
        }
        let mut predictor = Self {
            meta: CouplingMeta {
                dependent,
                net: config.net.clone(),
                stats: stats.clone(),
                validation_rmse_hz: f64::NAN,
                validation_frames: 0,
                fingerprint: String::new(),
            },
            net,
            store,
        };
        let held_out = if validation.is_empty() { train } else { validation };
        let (rmse, frames) = predictor.rmse(held_out)?;
        predictor.meta.validation_rmse_hz = rmse;
        predictor.meta.validation_frames = frames;
        predictor.meta.fingerprint = fingerprint(dependent, &predictor.meta.net, stats, &predictor.store)?;
        Ok(predictor)
    }

    pub fn meta(&self) -> &CouplingMeta {
        &self.meta
    }

    pub fn dependent(&self) -> Feature {
        self.meta.dependent
    }

    pub fn fingerprint(&self) -> &str {
        &self.meta.fingerprint
    }

    pub fn stats_id(&self) -> String {
        self.meta.stats.id()
    }

    /// Predicted dependent-formant trajectory in Hz for a raw track.
    pub fn predict(&self, track: &ParameterTrack) -> Result<Vec<f64>> {
        let x = masked_input(track, &self.meta.stats, self.meta.dependent)?;
        let y = self.net.forward_tensor(&x, true)?;
        let z = y.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(z.into_iter().map(|v| self.meta.stats.unz(self.meta.dependent, v)).collect())
    }

    /// Voiced-frame RMSE in Hz and the number of frames it covers.
    pub fn rmse(&self, tracks: &[ParameterTrack]) -> Result<(f64, usize)> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in tracks {
            let pred = self.predict(t)?;
            for ((p, v), &voiced) in pred.iter().zip(t.column(self.meta.dependent)).zip(t.voicing()) {
                if voiced {
                    sum += (p - v).powi(2);
                    n += 1;
                }
            }
        }
        Ok(if n == 0 { (0.0, 0) } else { ((sum / n as f64).sqrt(), n) })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.store.save(dir.join(WEIGHTS_FILE))?;
        std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: CouplingMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
        let mut store = ParamStore::new(DType::F32, 0);
        let net = WavebenderNet::new(meta.net.clone(), &mut store, "coupling")?;
        store.load(dir.join(WEIGHTS_FILE))?;
        let found = fingerprint(meta.dependent, &meta.net, &meta.stats, &store)?;
        if found != meta.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: meta.fingerprint.clone(),
                found,
            });
        }
        Ok(Self { meta, net, store })
    }
}

/// Trains the F2-from-F1 and F1-from-F2 predictors.
pub fn train_both(
    train: &[ParameterTrack],
    validation: &[ParameterTrack],
    stats: &NormalizationStats,
    config: &CouplingTrainConfig,
) -> Result<Vec<CouplingPredictor>> {
    [Feature::F2, Feature::F1]
        .into_iter()
        .map(|dep| CouplingPredictor::train(dep, train, validation, stats, config))
        .collect()
}

/// Saves each predictor under `dir/{dependent}/`.
pub fn save_all(dir: impl AsRef<Path>, predictors: &[CouplingPredictor]) -> Result<()> {
    for p in predictors {
        p.save(dir.as_ref().join(p.dependent().name()))?;
    }
    Ok(())
}

/// Loads whichever of `dir/f1/` and `dir/f2/` exist.
pub fn load_all(dir: impl AsRef<Path>) -> Result<Vec<CouplingPredictor>> {
    [Feature::F2, Feature::F1]
        .into_iter()
        .map(|f| dir.as_ref().join(f.name()))
        .filter(|d| d.join(META_FILE).exists())
        .map(CouplingPredictor::load)
        .collect()
}

/// Raises F2 to at least `(1 + margin)·F1` on voiced frames. F1 and unvoiced
/// frames are untouched.
pub fn project_formants(track: &ParameterTrack) -> Result<ParameterTrack> {
    let f1 = track.column(Feature::F1);
    let f2: Vec<f64> = track
        .column(Feature::F2)
        .iter()
        .zip(f1)
        .zip(track.voicing())
        .map(|((&f2, &f1), &voiced)| if voiced { f2.max(f1 * (1.0 + FORMANT_MARGIN)) } else { f2 })
        .collect();
    track.with_column(Feature::F2, &f2)
}

fn check_policy(predictor: &CouplingPredictor, policy: CouplingPolicy) -> Result<Option<Feature>> {
    match policy.roles() {
        None => Ok(None),
        Some((_, dependent)) if dependent == predictor.dependent() => Ok(Some(dependent)),
        Some((_, dependent)) => Err(Error::Manipulation(format!(
            "{policy:?} needs a predictor for {dependent}, got one for {}",
            predictor.dependent()
        ))),
    }
}

/// Replaces the dependent formant with the predictor output, then projects.
/// Identity under the independent policy.
pub fn apply_coupling(desired: &ParameterTrack, predictor: &CouplingPredictor, policy: CouplingPolicy) -> Result<ParameterTrack> {
    let Some(dependent) = check_policy(predictor, policy)? else {
        return Ok(desired.clone());
    };
    project_formants(&desired.with_column(dependent, &predictor.predict(desired)?)?)
}

/// Adds the change the predictor attributes to the manipulation,
/// `pred(desired) - pred(original)`, to the original dependent formant,
/// then projects. An unmodified driver leaves the track as it was, without
/// projection.
pub fn apply_coupling_relative(
    desired: &ParameterTrack,
    original: &ParameterTrack,
    predictor: &CouplingPredictor,
    policy: CouplingPolicy,
) -> Result<ParameterTrack> {
    let Some(dependent) = check_policy(predictor, policy)? else {
        return Ok(desired.clone());
    };
    if desired.n_frames() != original.n_frames() {
        return Err(Error::ShapeMismatch("desired and original tracks differ in length".into()));
    }
    let (driver, _) = policy.roles().expect("checked");
    if desired.column(driver) == original.column(driver) {
        return desired.with_column(dependent, &original.column(dependent).to_vec());
    }
    let after = predictor.predict(desired)?;
    let before = predictor.predict(original)?;
    let column: Vec<f64> = original
        .column(dependent)
        .iter()
        .zip(after.iter().zip(&before))
        .map(|(o, (a, b))| o + a - b)
        .collect();
    project_formants(&desired.with_column(dependent, &column)?)
}
