#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use wavebender::corpus::synthetic::{desk_corpus, DeskCorpusConfig};
use wavebender::corpus::Corpus;
use wavebender::manipulation::{coupling, CouplingTrainConfig, Pipeline};
use wavebender::trainer::{Trainer, TrainingConfig};
use wavebender::vocoder::create_reference_bundle;

pub fn corpus(n: usize) -> wavebender::Result<Corpus> {
    desk_corpus(&DeskCorpusConfig {
        n_utterances: n,
        min_secs: 0.8,
        max_secs: 1.2,
        ..DeskCorpusConfig::default()
    })
}

/// A briefly trained tiny model, the Griffin-Lim reference vocoder and both
/// coupling predictors. Good enough to exercise the plumbing in seconds.
pub fn quick_pipeline(corpus: &Corpus, dir: &Path) -> wavebender::Result<Pipeline> {
    let config = TrainingConfig {
        pretrain_epochs: 1,
        joint_epochs: 1,
        ..TrainingConfig::tiny()
    };
    let mut trainer = Trainer::new(config.clone(), corpus, None)?;
    trainer.train_joint()?;
    let model = trainer.model()?;

    let (train_ids, test_ids) = trainer.split();
    let analyse = |ids: &[String]| -> wavebender::Result<Vec<_>> {
        corpus.select(ids)?.into_iter().map(|u| model.analyse(&u.wave)).collect()
    };
    let ccfg = CouplingTrainConfig {
        epochs: 2,
        ..CouplingTrainConfig::default()
    };
    let predictors = coupling::train_both(&analyse(train_ids)?, &analyse(test_ids)?, &model.stats, &ccfg)?;

    let vocoder = create_reference_bundle(dir.join("vocoder"), &config.mel)?;
    Pipeline::new(Arc::new(model), Arc::new(vocoder))?.with_predictors(predictors)
}
