//! A counterbalanced A/B listening test with answer key and rating sheet.

mod common;

use wavebender::eval::stimuli::{export_stimuli, Condition};
use wavebender::manipulation::ManipulationSpec;
use wavebender::Feature;

fn main() -> wavebender::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "stimuli".into()));
    let dir = tempfile::tempdir()?;
    let corpus = common::corpus(6)?;
    let pipeline = common::quick_pipeline(&corpus, dir.path())?;

    let conditions = [
        Condition::Natural,
        Condition::VocoderOnly,
        Condition::Manipulation {
            name: "f0_x1.2".into(),
            spec: ManipulationSpec::scale(Feature::F0, 1.2),
        },
    ];
    let set = export_stimuli(&pipeline, &corpus.utterances()[..2], &conditions, &out, 7)?;
    let baseline_first = set.trials.iter().filter(|t| t.a == set.baseline).count();
    println!("{} trials, baseline played first in {baseline_first}", set.trials.len());
    for t in set.trials.iter().take(3) {
        println!("  {} {}: A={} B={}", t.trial, t.utterance, t.a, t.b);
    }
    println!("key and rating sheet in {}", out.display());
    Ok(())
}
