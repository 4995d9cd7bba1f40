//! Feature/mel preparation, normalization and batch assembly.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::augmentation::{augment, AugmentCache, AugmentationPolicy};
use crate::corpus::Utterance;
use crate::dsp::{corpus_median_log_f0, extract_parameters, ExtractOptions};
use crate::error::{Error, Result, StageExt};
use crate::mel::{MelConfig, MelExtractor, MelNormalization, MelSpectrogram};
use crate::norm::NormalizationStats;
use crate::seed::rng_for;
use crate::track::{Feature, ParameterTrack};

/// One normalized, time-aligned training pair.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub track: ParameterTrack,
    pub mel: Array2<f64>,
}

impl Example {
    pub fn n_frames(&self) -> usize {
        self.track.n_frames()
    }
}

/// Raw features and mels for a set of utterances.
#[derive(Debug, Clone)]
pub struct Analysed {
    pub id: String,
    pub track: ParameterTrack,
    pub mel: MelSpectrogram,
}

/// Extracts tracks and mels with identical framing, trimming to the shorter
/// of the two when they disagree by a frame.
pub fn analyse(utt: &Utterance, options: &ExtractOptions, mel: &MelExtractor) -> Result<Analysed> {
    let track = extract_parameters(&utt.wave, options).stage("extract")?;
    let spec = mel.compute(&utt.wave).stage("mel")?;
    align(utt.id.clone(), track, spec)
}

fn align(id: String, track: ParameterTrack, mut mel: MelSpectrogram) -> Result<Analysed> {
    let t = track.n_frames().min(mel.n_frames());
    let track = if t < track.n_frames() { track.slice(0, t)? } else { track };
    if t < mel.n_frames() {
        mel.bins = mel.bins.slice(ndarray::s![..t, ..]).to_owned();
    }
    Ok(Analysed { id, track, mel })
}

/// Replaces the log-f0 column of all-unvoiced tracks with `fallback`.
pub fn apply_f0_fallback(track: &ParameterTrack, fallback: f64) -> Result<ParameterTrack> {
    if !track.meta().f0_fallback {
        return Ok(track.clone());
    }
    track.with_column(Feature::F0, &vec![fallback; track.n_frames()])
}

/// Everything normalization-related that is fit on the training split.
#[derive(Debug, Clone)]
pub struct Normalizers {
    pub stats: NormalizationStats,
    pub mel: MelNormalization,
    pub fallback_log_f0: f64,
}

impl Normalizers {
    pub fn fit(train: &[Analysed]) -> Result<Self> {
        let fallback_log_f0 = corpus_median_log_f0(train.iter().map(|a| &a.track)).unwrap_or(200f64.ln());
        let tracks = train
            .iter()
            .map(|a| apply_f0_fallback(&a.track, fallback_log_f0))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stats: NormalizationStats::fit(&tracks)?,
            mel: MelNormalization::fit(train.iter().map(|a| &a.mel))?,
            fallback_log_f0,
        })
    }

    pub fn example(&self, a: &Analysed) -> Result<Example> {
        let track = self.stats.normalize(&apply_f0_fallback(&a.track, self.fallback_log_f0)?)?;
        let mel = self.mel.normalize(&a.mel)?.bins;
        Ok(Example {
            id: a.id.clone(),
            track,
            mel,
        })
    }
}

/// Training and validation data with everything needed to re-augment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train_utterances: Vec<Utterance>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub normalizers: Normalizers,
    pub options: ExtractOptions,
    extractor: MelExtractor,
    cache: Option<AugmentCache>,
}

impl Dataset {
    pub fn prepare(
        train: Vec<Utterance>,
        test: Vec<Utterance>,
        mel_config: &MelConfig,
        cache: Option<AugmentCache>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("training split is empty".into()));
        }
        let extractor = MelExtractor::new(mel_config.clone())?;
        let mut options = ExtractOptions::with_frame(mel_config.frame_config());
        for u in train.iter().chain(&test) {
            if u.wave.sample_rate() != mel_config.sample_rate {
                return Err(Error::InvalidInput(format!(
                    "utterance {} is {} Hz, the mel front-end expects {} Hz",
                    u.id,
                    u.wave.sample_rate(),
                    mel_config.sample_rate
                )));
            }
        }
        let train_raw = train
            .iter()
            .map(|u| analyse(u, &options, &extractor))
            .collect::<Result<Vec<_>>>()?;
        let normalizers = Normalizers::fit(&train_raw)?;
        options.fallback_log_f0 = normalizers.fallback_log_f0;
        let train_examples = train_raw.iter().map(|a| normalizers.example(a)).collect::<Result<Vec<_>>>()?;
        let test_examples = test
            .iter()
            .map(|u| analyse(u, &options, &extractor).and_then(|a| normalizers.example(&a)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            train_utterances: train,
            train: train_examples,
            test: test_examples,
            normalizers,
            options,
            extractor,
            cache,
        })
    }

    /// Training example `i` for `epoch`, augmented according to `policy`.
    pub fn train_example(&self, i: usize, epoch: u64, policy: &AugmentationPolicy) -> Result<Example> {
        let utt = &self.train_utterances[i];
        let draw = policy.draw(&utt.id, epoch);
        if draw.is_identity() {
            return Ok(self.train[i].clone());
        }
        let analysed = match &self.cache {
            Some(cache) => {
                let (track, mel) = cache.get_or_compute(&utt.id, &utt.wave, draw, &self.options, &self.extractor)?;
                align(utt.id.clone(), track, mel)?
            }
            None => {
                let aug = augment(&utt.wave, draw, &self.options).stage("augment")?;
                align(utt.id.clone(), aug.track, self.extractor.compute(&aug.wave)?)?
            }
        };
        self.normalizers.example(&analysed)
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.train.len().div_ceil(batch_size)
    }

    /// Example indices of batch `b` in `epoch`, from a per-epoch shuffle.
    pub fn batch_indices(&self, seed: u64, epoch: u64, b: usize, batch_size: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng_for(seed, &[&"shuffle", &epoch]));
        order.chunks(batch_size).nth(b).map(<[usize]>::to_vec).unwrap_or_default()
    }
}

/// A batch as network-ready tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub starts: Vec<usize>,
    /// `(B, 6, L)`
    pub input: Tensor,
    /// `(B, M, L)`
    pub target: Tensor,
}

/// Random equal-length crops: `L = min(crop, shortest example)`.
pub fn make_batch(examples: &[Example], crop: usize, rng: &mut impl Rng, dtype: DType) -> Result<Batch> {
    let len = examples.iter().map(Example::n_frames).min().unwrap_or(0).min(crop);
    if len == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut starts = Vec::with_capacity(examples.len());
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for ex in examples {
        let start = rng.gen_range(0..=ex.n_frames() - len);
        starts.push(start);
        let (x, y) = example_tensors(ex, start, len)?;
        inputs.push(x);
        targets.push(y);
    }
    Ok(Batch {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        starts,
        input: Tensor::cat(&inputs, 0)?.to_dtype(dtype)?,
        target: Tensor::cat(&targets, 0)?.to_dtype(dtype)?,
    })
}

/// `(1, 6, len)` input and `(1, M, len)` target starting at frame `start`.
pub fn example_tensors(ex: &Example, start: usize, len: usize) -> Result<(Tensor, Tensor)> {
    let track = ex.track.slice(start, start + len)?;
    let mut x = Vec::with_capacity(6 * len);
    for f in Feature::ALL {
        x.extend(track.column(f).iter().copied());
    }
    x.extend(track.voicing().iter().map(|&v| f64::from(u8::from(v))));
    let m = ex.mel.ncols();
    let y: Vec<f64> = ex.mel.slice(ndarray::s![start..start + len, ..]).t().iter().copied().collect();
    Ok((
        Tensor::from_vec(x, (1, 6, len), &Device::Cpu)?,
        Tensor::from_vec(y, (1, m, len), &Device::Cpu)?,
    ))
}
