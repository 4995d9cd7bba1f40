//! Objective evaluation: copy-synthesis error per feature, manipulation error
//! against the scaling factor, and the disentanglement matrix.
//!
//! Errors are squared differences of z-scored features between the desired
//! track and the track re-extracted from synthesized audio, averaged over
//! frames. Tracks are compared over `min(T_desired, T_realized)` frames minus
//! `edge` frames at each end.

pub mod report;
pub mod stimuli;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::corpus::Utterance;
use crate::dsp::{extract_parameters, ExtractOptions};
use crate::error::{Error, Result};
use crate::manipulation::{ManipulationSpec, Pipeline};
use crate::norm::NormalizationStats;
use crate::seed::{derive_seed, rng_for};
use crate::track::{Feature, ParameterTrack, N_FEATURES};
use crate::vocoder::Vocoder;

pub const DEFAULT_M_SET: [f64; 7] = [0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3];
pub const DEFAULT_EDGE: usize = 2;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Squared z-differences of one utterance, summed per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UttErrors {
    pub id: String,
    pub sq_sum: [f64; N_FEATURES],
    pub frames: usize,
}

impl UttErrors {
    pub fn mse(&self, feature: Feature) -> f64 {
        self.sq_sum[feature.index()] / self.frames as f64
    }

    /// Mean over features of the per-feature MSE.
    pub fn overall(&self, exclude: Option<Feature>) -> f64 {
        let kept: Vec<f64> = Feature::ALL.into_iter().filter(|&f| Some(f) != exclude).map(|f| self.mse(f)).collect();
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

pub fn feature_errors(
    id: &str,
    desired: &ParameterTrack,
    realized: &ParameterTrack,
    stats: &NormalizationStats,
    edge: usize,
) -> Result<UttErrors> {
    if desired.is_normalized() || realized.is_normalized() {
        return Err(Error::NormalizationState("normalized; errors are computed from raw tracks"));
    }
    let t = desired.n_frames().min(realized.n_frames());
    if t <= 2 * edge {
        return Err(Error::InvalidInput(format!(
            "{id}: {t} comparable frames leave nothing after dropping {edge} edge frames"
        )));
    }
    let mut sq_sum = [0.0; N_FEATURES];
    for f in Feature::ALL {
        let (d, r) = (desired.column(f), realized.column(f));
        sq_sum[f.index()] = (edge..t - edge).map(|i| (stats.z(f, d[i]) - stats.z(f, r[i])).powi(2)).sum();
    }
    Ok(UttErrors {
        id: id.to_string(),
        sq_sum,
        frames: t - 2 * edge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.low - 1e-12 && x <= self.high + 1e-12
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Utterance-level bootstrap of a statistic over resampled index sets.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, label: &str, stat: F) -> Interval
where
    F: Fn(&[usize]) -> f64,
{
    let all: Vec<usize> = (0..n).collect();
    let mean = stat(&all);
    if n == 0 || resamples == 0 {
        return Interval { mean, low: mean, high: mean };
    }
    let mut rng = rng_for(seed, &[&"bootstrap", &label]);
    let mut draws: Vec<f64> = (0..resamples)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            stat(&idx)
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    Interval {
        mean,
        low: quantile(&draws, 0.025),
        high: quantile(&draws, 0.975),
    }
}

/// Frame-weighted MSE of `feature` (or the feature average) over `idx`.
pub fn pooled_mse(utts: &[UttErrors], idx: &[usize], feature: Option<Feature>) -> f64 {
    let frames: usize = idx.iter().map(|&i| utts[i].frames).sum();
    if frames == 0 {
        return 0.0;
    }
    let per = |f: Feature| idx.iter().map(|&i| utts[i].sq_sum[f.index()]).sum::<f64>() / frames as f64;
    match feature {
        Some(f) => per(f),
        None => Feature::ALL.into_iter().map(per).sum::<f64>() / N_FEATURES as f64,
    }
}

/// Something that turns an utterance into audio.
pub trait System: Sync {
    fn name(&self) -> &str;
    fn synthesize(&self, utt: &Utterance, reference: &ParameterTrack) -> Result<Waveform>;
}

/// Parameters, network, generator, vocoder.
pub struct FullPipeline<'a> {
    pub pipeline: &'a Pipeline,
    pub seed: u64,
}

impl System for FullPipeline<'_> {
    fn name(&self) -> &str {
        "wavebender"
    }

    fn synthesize(&self, utt: &Utterance, reference: &ParameterTrack) -> Result<Waveform> {
        Ok(self.pipeline.render(reference, derive_seed(self.seed, &[&utt.id]))?.wave)
    }
}

/// The vocoder fed the ground-truth mel spectrogram.
pub struct VocoderOnly<'a> {
    pub vocoder: &'a dyn Vocoder,
}

impl System for VocoderOnly<'_> {
    fn name(&self) -> &str {
        "vocoder_only"
    }

    fn synthesize(&self, utt: &Utterance, _: &ParameterTrack) -> Result<Waveform> {
        let mel = crate::mel::compute(&utt.wave, self.vocoder.mel_config())?;
        self.vocoder.synthesize(&mel)
    }
}

/// Returns the input audio; an oracle for the measurement itself.
pub struct Identity;

impl System for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn synthesize(&self, utt: &Utterance, _: &ParameterTrack) -> Result<Waveform> {
        Ok(utt.wave.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemErrors {
    pub name: String,
    pub features: Vec<Interval>,
    pub overall: Interval,
    pub n_frames: usize,
    pub per_utterance: Vec<UttErrors>,
}

impl SystemErrors {
    pub fn feature(&self, f: Feature) -> &Interval {
        &self.features[f.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub seed: u64,
    pub bootstrap: usize,
    pub edge: usize,
    pub utterances: Vec<String>,
    /// `(utterance, reason)` for clips dropped from every system.
    pub excluded: Vec<(String, String)>,
    pub systems: Vec<SystemErrors>,
}

impl ReconstructionReport {
    pub fn system(&self, name: &str) -> Option<&SystemErrors> {
        self.systems.iter().find(|s| s.name == name)
    }
}

fn summarize(name: &str, utts: Vec<UttErrors>, b: usize, seed: u64) -> SystemErrors {
    let n = utts.len();
    let features = Feature::ALL
        .into_iter()
        .map(|f| bootstrap(n, b, seed, name, |idx| pooled_mse(&utts, idx, Some(f))))
        .collect();
    let overall = bootstrap(n, b, seed, name, |idx| pooled_mse(&utts, idx, None));
    SystemErrors {
        name: name.to_string(),
        features,
        overall,
        n_frames: utts.iter().map(|u| u.frames).sum(),
        per_utterance: utts,
    }
}

#[derive(Debug, Clone)]
pub struct Evaluator {
    pub options: ExtractOptions,
    pub stats: NormalizationStats,
    pub edge: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Evaluator {
    pub fn new(options: ExtractOptions, stats: NormalizationStats, seed: u64) -> Self {
        Self {
            options,
            stats,
            edge: DEFAULT_EDGE,
            bootstrap: DEFAULT_BOOTSTRAP,
            seed,
        }
    }

    pub fn for_pipeline(pipeline: &Pipeline, seed: u64) -> Self {
        let model = pipeline.model();
        Self::new(model.extract_options(), model.stats.clone(), seed)
    }

    fn analyse(&self, wave: &Waveform) -> Result<ParameterTrack> {
        extract_parameters(wave, &self.options)
    }

    /// Every system is scored on the same utterances; a clip that fails for
    /// any system is dropped from all of them.
    pub fn copy_synthesis_error(&self, utts: &[Utterance], systems: &[&dyn System]) -> Result<ReconstructionReport> {
        let mut kept = Vec::new();
        let mut excluded = Vec::new();
        let mut per_system: Vec<Vec<UttErrors>> = vec![Vec::new(); systems.len()];
        for utt in utts {
            let attempt = || -> Result<Vec<UttErrors>> {
                let reference = self.analyse(&utt.wave)?;
                systems
                    .iter()
                    .map(|s| {
                        let wave = s.synthesize(utt, &reference)?;
                        let realized = self.analyse(&wave)?;
                        feature_errors(&utt.id, &reference, &realized, &self.stats, self.edge)
                    })
                    .collect()
            };
            match attempt() {
                Ok(errs) => {
                    kept.push(utt.id.clone());
                    for (slot, e) in per_system.iter_mut().zip(errs) {
                        slot.push(e);
                    }
                }
                Err(e) => {
                    log::warn!("excluding {} from copy-synthesis evaluation: {e}", utt.id);
                    excluded.push((utt.id.clone(), e.to_string()));
                }
            }
        }
        Ok(ReconstructionReport {
            seed: self.seed,
            bootstrap: self.bootstrap,
            edge: self.edge,
            utterances: kept,
            excluded,
            systems: systems
                .iter()
                .zip(per_system)
                .map(|(s, utts)| summarize(s.name(), utts, self.bootstrap, self.seed))
                .collect(),
        })
    }

    /// One feature scaled at a time over `m_set`; formant scalings use the
    /// coupling predictor when the pipeline has one.
    pub fn manipulation_sweep(
        &self,
        pipeline: &Pipeline,
        utts: &[Utterance],
        features: &[Feature],
        m_set: &[f64],
    ) -> Result<ManipulationReport> {
        let mut cells = Vec::new();
        let mut excluded = Vec::new();
        let references: Vec<Option<ParameterTrack>> = utts
            .iter()
            .map(|u| match self.analyse(&u.wave) {
                Ok(t) => Some(t),
                Err(e) => {
                    excluded.push((u.id.clone(), e.to_string()));
                    None
                }
            })
            .collect();
        for &feature in features {
            for &m in m_set {
                let mut spec = ManipulationSpec::scale(feature, m);
                if let Some((_, dependent)) = spec.coupling_policy.roles() {
                    if pipeline.predictor(dependent).is_none() {
                        spec = spec.with_policy(crate::manipulation::CouplingPolicy::Independent);
                    }
                }
                let mut errs = Vec::new();
                for (utt, reference) in utts.iter().zip(&references) {
                    let Some(reference) = reference else { continue };
                    let attempt = || -> Result<UttErrors> {
                        let out = pipeline.manipulate(reference, &spec, derive_seed(self.seed, &[&utt.id]))?;
                        let realized = self.analyse(&out.rendered.wave)?;
                        feature_errors(&utt.id, &out.desired, &realized, &self.stats, self.edge)
                    };
                    match attempt() {
                        Ok(e) => errs.push(e),
                        Err(e) => {
                            log::warn!("excluding {} at {feature} x{m}: {e}", utt.id);
                            excluded.push((format!("{}@{feature}x{m}", utt.id), e.to_string()));
                        }
                    }
                }
                cells.push(SweepCell::new(feature, m, errs, self.bootstrap, self.seed));
            }
        }
        Ok(ManipulationReport {
            seed: self.seed,
            bootstrap: self.bootstrap,
            m_set: m_set.to_vec(),
            features: features.to_vec(),
            cells,
            excluded,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub feature: Feature,
    pub m: f64,
    /// Frame-weighted MSE of each measured feature; one matrix row.
    pub per_feature: [f64; N_FEATURES],
    /// Mean of `per_feature`; spread across utterances.
    pub overall_incl: MeanStd,
    /// As above without the manipulated feature.
    pub overall_excl: MeanStd,
    pub overall_ci: Interval,
    pub n_utterances: usize,
    pub n_frames: usize,
}

impl SweepCell {
    fn new(feature: Feature, m: f64, errs: Vec<UttErrors>, b: usize, seed: u64) -> Self {
        let all: Vec<usize> = (0..errs.len()).collect();
        let mut per_feature = [0.0; N_FEATURES];
        for f in Feature::ALL {
            per_feature[f.index()] = pooled_mse(&errs, &all, Some(f));
        }
        let incl_mean = per_feature.iter().sum::<f64>() / N_FEATURES as f64;
        let excl_mean = Feature::ALL
            .into_iter()
            .filter(|&f| f != feature)
            .map(|f| per_feature[f.index()])
            .sum::<f64>()
            / (N_FEATURES - 1) as f64;
        let incl: Vec<f64> = errs.iter().map(|e| e.overall(None)).collect();
        let excl: Vec<f64> = errs.iter().map(|e| e.overall(Some(feature))).collect();
        let label = format!("{feature}x{m}");
        Self {
            feature,
            m,
            per_feature,
            overall_incl: MeanStd {
                mean: incl_mean,
                std: mean_std(&incl).std,
            },
            overall_excl: MeanStd {
                mean: excl_mean,
                std: mean_std(&excl).std,
            },
            overall_ci: bootstrap(errs.len(), b, seed, &label, |idx| pooled_mse(&errs, idx, None)),
            n_utterances: errs.len(),
            n_frames: errs.iter().map(|e| e.frames).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationReport {
    pub seed: u64,
    pub bootstrap: usize,
    pub m_set: Vec<f64>,
    pub features: Vec<Feature>,
    pub cells: Vec<SweepCell>,
    pub excluded: Vec<(String, String)>,
}

/// Rows are manipulated features, columns measured features, at one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementMatrix {
    pub m: f64,
    pub rows: Vec<(Feature, [f64; N_FEATURES])>,
}

impl ManipulationReport {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            bootstrap: 0,
            m_set: Vec::new(),
            features: Vec::new(),
            cells: Vec::new(),
            excluded: Vec::new(),
        }
    }

    pub fn cell(&self, feature: Feature, m: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.feature == feature && (c.m - m).abs() < 1e-12)
    }

    pub fn matrix(&self, m: f64) -> DisentanglementMatrix {
        DisentanglementMatrix {
            m,
            rows: self
                .features
                .iter()
                .filter_map(|&f| self.cell(f, m).map(|c| (f, c.per_feature)))
                .collect(),
        }
    }

    /// Mean increase of the overall error over the `m = 1` cell across the
    /// other scaling factors. Small values mean the control is respected
    /// equally well at every `m`.
    pub fn excess_error(&self, feature: Feature) -> Option<f64> {
        let base = self.cell(feature, 1.0)?.overall_incl.mean;
        let others: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.feature == feature && (c.m - 1.0).abs() > 1e-12)
            .map(|c| c.overall_incl.mean - base)
            .collect();
        (!others.is_empty()).then(|| others.iter().sum::<f64>() / others.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackMeta;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn stats() -> NormalizationStats {
        NormalizationStats {
            mean: [500.0, 1500.0, 4.7, 2000.0, -0.003],
            std: [100.0, 300.0, 0.2, 500.0, 0.001],
        }
    }

    fn track(values: Array2<f64>) -> ParameterTrack {
        let t = values.nrows();
        ParameterTrack::new(values, vec![true; t], 86.0, false, TrackMeta::default()).unwrap()
    }

    #[test]
    fn matches_hand_computation() {
        let s = stats();
        let d = Array2::from_shape_fn((9, 5), |(i, c)| s.mean[c] + s.std[c] * (i as f64 * 0.1 + c as f64));
        let r = Array2::from_shape_fn((8, 5), |(i, c)| s.mean[c] + s.std[c] * (i as f64 * 0.3 - c as f64 * 0.5));
        let e = feature_errors("x", &track(d.clone()), &track(r.clone()), &s, 2).unwrap();
        assert_eq!(e.frames, 4);
        for c in 0..5 {
            let mut want = 0.0;
            for i in 2..6 {
                let zd = i as f64 * 0.1 + c as f64;
                let zr = i as f64 * 0.3 - c as f64 * 0.5;
                want += (zd - zr) * (zd - zr);
            }
            assert!((e.sq_sum[c] - want).abs() <= 1e-10 * want.max(1.0), "{c}: {} vs {want}", e.sq_sum[c]);
        }
    }

    #[test]
    fn too_short_after_edges() {
        let s = stats();
        let d = Array2::from_shape_fn((4, 5), |(_, c)| s.mean[c]);
        assert!(feature_errors("x", &track(d.clone()), &track(d), &s, 2).is_err());
    }

    #[test]
    fn overall_is_mean_of_matrix_row() {
        let errs: Vec<UttErrors> = (0..4)
            .map(|u| UttErrors {
                id: format!("u{u}"),
                sq_sum: [1.0 + u as f64, 0.5, 2.0 * u as f64, 0.1, 3.0],
                frames: 10 + u,
            })
            .collect();
        let cell = SweepCell::new(Feature::F0, 1.1, errs, 100, 0);
        let row_mean = cell.per_feature.iter().sum::<f64>() / 5.0;
        assert!((cell.overall_incl.mean - row_mean).abs() <= 1e-12);
        let excl = (cell.per_feature.iter().sum::<f64>() - cell.per_feature[Feature::F0.index()]) / 4.0;
        assert!((cell.overall_excl.mean - excl).abs() <= 1e-12);
    }

    #[test]
    fn bootstrap_narrows_with_more_utterances() {
        let mut rng = rng_for(9, &[&"fake-utts"]);
        let utts: Vec<UttErrors> = (0..20)
            .map(|u| UttErrors {
                id: format!("u{u}"),
                sq_sum: [rng.gen_range(0.0..40.0), 1.0, 1.0, 1.0, 1.0],
                frames: 20,
            })
            .collect();
        let width = |n: usize| bootstrap(n, 2000, 1, "w", |idx| pooled_mse(&utts[..n], idx, Some(Feature::F1))).width();
        let (w5, w10, w20) = (width(5), width(10), width(20));
        assert!(w5 > w10 && w10 > w20, "{w5} {w10} {w20}");
    }

    #[test]
    fn excess_error_is_relative_to_unit_scale() {
        let mk = |m: f64, v: f64| SweepCell {
            feature: Feature::F1,
            m,
            per_feature: [v; 5],
            overall_incl: MeanStd { mean: v, std: 0.0 },
            overall_excl: MeanStd { mean: v, std: 0.0 },
            overall_ci: Interval { mean: v, low: v, high: v },
            n_utterances: 1,
            n_frames: 1,
        };
        let report = ManipulationReport {
            m_set: vec![0.9, 1.0, 1.1],
            features: vec![Feature::F1],
            cells: vec![mk(0.9, 2.0), mk(1.0, 1.0), mk(1.1, 4.0)],
            ..ManipulationReport::empty(0)
        };
        assert_eq!(report.excess_error(Feature::F1), Some(2.0));
        assert_eq!(report.excess_error(Feature::F0), None);
        assert_eq!(report.matrix(1.1).rows, vec![(Feature::F1, [4.0; 5])]);
    }

    proptest! {
        #[test]
        fn errors_are_nonnegative_and_zero_on_identity(seed in 0u64..200) {
            let mut rng = rng_for(seed, &[&"p"]);
            let s = stats();
            let d = Array2::from_shape_fn((12, 5), |(_, c)| s.mean[c] + s.std[c] * rng.gen_range(-2.0..2.0));
            let r = Array2::from_shape_fn((11, 5), |(_, c)| s.mean[c] + s.std[c] * rng.gen_range(-2.0..2.0));
            let e = feature_errors("p", &track(d.clone()), &track(r), &s, 2).unwrap();
            prop_assert!(e.sq_sum.iter().all(|v| *v >= 0.0));
            let same = feature_errors("p", &track(d.clone()), &track(d), &s, 2).unwrap();
            prop_assert!(same.sq_sum.iter().all(|v| *v == 0.0));
        }
    }
}
