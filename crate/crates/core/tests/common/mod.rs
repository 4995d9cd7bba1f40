#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use wavebender::corpus::synthetic::{desk_corpus, DeskCorpusConfig};
use wavebender::corpus::Utterance;
use wavebender::manipulation::Pipeline;
use wavebender::mel::MelNormalization;
use wavebender::model::WavebenderModel;
use wavebender::trainer::TrainingConfig;
use wavebender::vocoder::create_reference_bundle;
use wavebender::NormalizationStats;

pub fn stats() -> NormalizationStats {
    NormalizationStats {
        mean: [550.0, 1600.0, 130f64.ln(), 2200.0, -0.002],
        std: [120.0, 250.0, 0.25, 600.0, 0.001],
    }
}

/// Untrained tiny model with the Griffin-Lim reference vocoder.
pub fn pipeline(dir: &Path) -> Pipeline {
    let cfg = TrainingConfig::tiny();
    let mel_norm = MelNormalization {
        mean: vec![-5.0; cfg.mel.n_mels],
        std: vec![2.0; cfg.mel.n_mels],
    };
    let model = WavebenderModel::initialized(&cfg, stats(), mel_norm, 130f64.ln()).unwrap();
    let bundle = create_reference_bundle(dir.join("vocoder"), &cfg.mel).unwrap();
    Pipeline::new(Arc::new(model), Arc::new(bundle)).unwrap()
}

pub fn utterances(n: usize) -> Vec<Utterance> {
    desk_corpus(&DeskCorpusConfig {
        n_utterances: n,
        min_secs: 0.8,
        max_secs: 1.0,
        seed: 11,
        ..DeskCorpusConfig::default()
    })
    .unwrap()
    .utterances()
    .to_vec()
}
