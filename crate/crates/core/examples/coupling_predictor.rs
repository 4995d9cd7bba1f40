//! Learned formant coupling: F2 predicted from F1, used when F1 is scaled.

mod common;

use wavebender::manipulation::{coupling, CouplingPolicy, ManipulationSpec};
use wavebender::Feature;

fn main() -> wavebender::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = common::corpus(6)?;
    let pipeline = common::quick_pipeline(&corpus, dir.path())?;

    for p in pipeline.predictors() {
        println!("{} predictor: validation RMSE {:.1} Hz", p.dependent(), p.meta().validation_rmse_hz);
    }
    let saved: Vec<_> = pipeline.predictors().cloned().collect();
    coupling::save_all(dir.path().join("coupling"), &saved)?;
    println!("reloaded {} predictors", coupling::load_all(dir.path().join("coupling"))?.len());

    let track = pipeline.analyse(&corpus.utterances()[0].wave)?;
    let spec = ManipulationSpec::scale(Feature::F1, 1.15);
    let independent = pipeline.desired(&track, &spec)?;
    let coupled = pipeline.desired(&track, &spec.clone().with_policy(CouplingPolicy::PredictF2FromF1))?;
    let mean = |t: &wavebender::ParameterTrack, f| t.column(f).mean().unwrap_or(f64::NAN);
    println!(
        "F1 x1.15: F2 mean {:.0} Hz independent, {:.0} Hz coupled (original {:.0})",
        mean(&independent, Feature::F2),
        mean(&coupled, Feature::F2),
        mean(&track, Feature::F2)
    );
    Ok(())
}
