//! Pretraining then joint training of a tiny model on a synthetic corpus,
//! with checkpoints, metrics and a resume.
//!
//! cargo run --release --example train_tiny -- [out_dir]

use wavebender::corpus::synthetic::{desk_corpus, DeskCorpusConfig};
use wavebender::trainer::{checkpoint, Trainer, TrainingConfig};

fn main() -> wavebender::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/tiny".into()));
    let corpus = desk_corpus(&DeskCorpusConfig {
        n_utterances: 8,
        ..DeskCorpusConfig::default()
    })?;
    let config = TrainingConfig {
        pretrain_epochs: 2,
        joint_epochs: 1,
        ..TrainingConfig::tiny()
    };

    let mut trainer = Trainer::new(config, &corpus, Some(&out))?;
    trainer.pretrain()?;
    println!("after pretraining: step {}, lr {:.2e}", trainer.state().step, trainer.current_lr());
    let saved = out.join("after_pretrain");
    trainer.checkpoint()?.save(&saved)?;
    drop(trainer);

    let mut trainer = Trainer::resume(&corpus, &saved, Some(&out), None)?;
    trainer.train_joint()?;
    for r in trainer.history() {
        println!(
            "epoch {} {:?}: train {:.4}, val pre {:?}, val post {:?}",
            r.epoch, r.phase, r.train_loss, r.val_pre, r.val_post
        );
    }
    println!("best checkpoint: {}", checkpoint::resolve(&out)?.display());
    Ok(())
}
