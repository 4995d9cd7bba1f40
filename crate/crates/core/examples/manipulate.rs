//! Scaling single parameters and checking the change in the re-analysed
//! audio.

mod common;

use wavebender::manipulation::{Action, ManipulationSpec};
use wavebender::Feature;

fn main() -> wavebender::Result<()> {
    let dir = tempfile::tempdir()?;
    let corpus = common::corpus(6)?;
    let pipeline = common::quick_pipeline(&corpus, dir.path())?;
    let wave = &corpus.utterances()[1].wave;
    let track = pipeline.analyse(wave)?;
    let base = pipeline.render(&track, 1)?;
    let base_track = pipeline.analyse(&base.wave)?;

    for (feature, m) in [(Feature::F0, 1.2), (Feature::F1, 0.9), (Feature::Centroid, 1.1)] {
        let spec = ManipulationSpec::scale(feature, m);
        let out = pipeline.manipulate(&track, &spec, 1)?;
        let realized = pipeline.analyse(&out.rendered.wave)?;
        let n = realized.n_frames().min(base_track.n_frames());
        let ratio = (0..n)
            .map(|i| realized.column(feature)[i] - base_track.column(feature)[i])
            .sum::<f64>()
            / n as f64;
        println!("{feature} x{m}: mean realized change {ratio:+.4} {}", feature.unit());
    }

    // a full replacement trajectory: a falling f0 contour
    let n = track.n_frames();
    let contour: Vec<f64> = (0..n).map(|i| (160.0 - 60.0 * i as f64 / n as f64).ln()).collect();
    let mut spec = ManipulationSpec::keep();
    spec.actions.insert(Feature::F0, Action::Replace(contour));
    let out = pipeline.manipulate(&track, &spec, 1)?;
    out.rendered.wave.write_wav(dir.path().join("falling.wav"))?;
    println!("falling contour rendered, {} samples", out.rendered.wave.len());
    println!("spec as JSON: {}", serde_json::to_string(&ManipulationSpec::scale(Feature::F2, 1.1))?);
    Ok(())
}
