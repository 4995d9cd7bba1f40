//! Copy-synthesis error, a manipulation sweep and the report files.

mod common;

use wavebender::eval::report::emit_report;
use wavebender::eval::{Evaluator, FullPipeline, Identity, VocoderOnly};
use wavebender::Feature;

fn main() -> wavebender::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = common::corpus(6)?;
    let pipeline = common::quick_pipeline(&corpus, dir.path())?;
    let utts = &corpus.utterances()[..3];

    let mut evaluator = Evaluator::for_pipeline(&pipeline, 2022);
    evaluator.bootstrap = 100;
    let full = FullPipeline { pipeline: &pipeline, seed: 2022 };
    let vocoder = VocoderOnly { vocoder: pipeline.vocoder() };
    let recon = evaluator.copy_synthesis_error(utts, &[&Identity, &vocoder, &full])?;
    for s in &recon.systems {
        println!("{:<13} overall {:.4} [{:.4}, {:.4}]", s.name, s.overall.mean, s.overall.low, s.overall.high);
    }

    let manip = evaluator.manipulation_sweep(&pipeline, utts, &[Feature::F0, Feature::F1], &[0.9, 1.0, 1.1])?;
    for f in [Feature::F0, Feature::F1] {
        println!("{f}: excess error {:.4}", manip.excess_error(f).unwrap_or(f64::NAN));
    }
    for path in emit_report(dir.path().join("report"), &recon, &manip)? {
        println!("wrote {}", path.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}
