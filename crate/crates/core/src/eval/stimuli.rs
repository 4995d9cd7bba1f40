//! Listening-test packaging: a natural reference per utterance and
//! counterbalanced A/B pairs comparing copy synthesis against each
//! condition, plus an answer key and a blank rating sheet.
//!
//! ```text
//! reference/{utt}.wav
//! stimuli/{trial}_A.wav, stimuli/{trial}_B.wav
//! key.tsv           trial, utterance, condition behind A and B
//! rating_sheet.tsv  one row per trial with empty rating columns
//! stimuli.json      conditions, seed and trial list
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::manipulation::{ManipulationSpec, Pipeline};
use crate::seed::{derive_seed, rng_for};

pub const BASELINE: &str = "copy_synthesis";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    /// The recording itself.
    Natural,
    /// The vocoder fed ground-truth mels.
    VocoderOnly,
    Manipulation { name: String, spec: ManipulationSpec },
}

impl Condition {
    pub fn name(&self) -> &str {
        match self {
            Condition::Natural => "natural",
            Condition::VocoderOnly => "vocoder_only",
            Condition::Manipulation { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: String,
    pub utterance: String,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSet {
    pub seed: u64,
    pub baseline: String,
    pub conditions: Vec<String>,
    pub trials: Vec<Trial>,
}

pub fn export_stimuli(
    pipeline: &Pipeline,
    utts: &[Utterance],
    conditions: &[Condition],
    out: impl AsRef<Path>,
    seed: u64,
) -> Result<StimulusSet> {
    let out = out.as_ref();
    if conditions.is_empty() {
        return Err(Error::InvalidInput("at least one condition is needed".into()));
    }
    let mut names: Vec<&str> = conditions.iter().map(Condition::name).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&BASELINE) {
        return Err(Error::InvalidInput("condition names must be unique and differ from the baseline".into()));
    }
    std::fs::create_dir_all(out.join("reference"))?;
    std::fs::create_dir_all(out.join("stimuli"))?;

    struct Pair {
        utt: String,
        baseline: crate::audio::Waveform,
        condition: String,
        wave: crate::audio::Waveform,
    }
    let mut pairs = Vec::new();
    for utt in utts {
        utt.wave.write_wav(out.join("reference").join(format!("{}.wav", utt.id)))?;
        let noise = derive_seed(seed, &[&utt.id]);
        let track = pipeline.analyse(&utt.wave)?;
        let baseline = pipeline.render(&track, noise)?.wave;
        for c in conditions {
            let wave = match c {
                Condition::Natural => utt.wave.clone(),
                Condition::VocoderOnly => {
                    let mel = crate::mel::compute(&utt.wave, pipeline.vocoder().mel_config())?;
                    pipeline.vocoder().synthesize(&mel)?
                }
                Condition::Manipulation { spec, .. } => pipeline.manipulate(&track, spec, noise)?.rendered.wave,
            };
            pairs.push(Pair {
                utt: utt.id.clone(),
                baseline: baseline.clone(),
                condition: c.name().to_string(),
                wave,
            });
        }
    }

    // half the pairs put the baseline first; trial order is shuffled too
    let mut rng = rng_for(seed, &[&"stimuli"]);
    let mut swap: Vec<bool> = (0..pairs.len()).map(|i| i % 2 == 1).collect();
    swap.shuffle(&mut rng);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng);

    let mut trials = Vec::with_capacity(pairs.len());
    for (k, &i) in order.iter().enumerate() {
        let p = &pairs[i];
        let trial = format!("{:03}", k + 1);
        let (a, b, wa, wb) = if swap[i] {
            (p.condition.clone(), BASELINE.to_string(), &p.wave, &p.baseline)
        } else {
            (BASELINE.to_string(), p.condition.clone(), &p.baseline, &p.wave)
        };
        wa.write_wav(out.join("stimuli").join(format!("{trial}_A.wav")))?;
        wb.write_wav(out.join("stimuli").join(format!("{trial}_B.wav")))?;
        trials.push(Trial {
            trial,
            utterance: p.utt.clone(),
            a,
            b,
        });
    }

    let mut key = String::from("trial\tutterance\ta\tb\n");
    let mut sheet = String::from("trial\treference\tstimulus_a\tstimulus_b\trating_a\trating_b\tpreference\n");
    for t in &trials {
        let _ = writeln!(key, "{}\t{}\t{}\t{}", t.trial, t.utterance, t.a, t.b);
        let _ = writeln!(
            sheet,
            "{0}\treference/{1}.wav\tstimuli/{0}_A.wav\tstimuli/{0}_B.wav\t\t\t",
            t.trial, t.utterance
        );
    }
    std::fs::write(out.join("key.tsv"), key)?;
    std::fs::write(out.join("rating_sheet.tsv"), sheet)?;
    let set = StimulusSet {
        seed,
        baseline: BASELINE.into(),
        conditions: conditions.iter().map(|c| c.name().to_string()).collect(),
        trials,
    };
    std::fs::write(out.join("stimuli.json"), serde_json::to_string_pretty(&set)?)?;
    Ok(set)
}
