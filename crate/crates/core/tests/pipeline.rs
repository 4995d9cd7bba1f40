mod common;

use wavebender::eval::report::{emit_report, DISENTANGLE_TABLE, MANIP_TABLE, RECON_TABLE};
use wavebender::eval::{Evaluator, FullPipeline, Identity, VocoderOnly};
use wavebender::manipulation::{CouplingPolicy, ManipulationSpec};
use wavebender::{Error, Feature, Waveform};

#[test]
fn copy_synthesis_gives_hop_samples_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let utt = &common::utterances(1)[0];
    let out = p.copy_synthesize(&utt.wave, 0).unwrap();
    let hop = p.model().mel_config.hop;
    assert_eq!(out.rendered.mel.n_frames(), out.desired.n_frames());
    assert_eq!(out.rendered.wave.len(), out.desired.n_frames() * hop);
    assert!(out.rendered.wave.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
}

#[test]
fn single_frame_input_renders() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let n = p.model().mel_config.frame_config().min_samples();
    let wave = Waveform::new((0..n).map(|i| 0.3 * (i as f64 * 0.07).sin()).collect(), 22_050).unwrap();
    let out = p.copy_synthesize(&wave, 0).unwrap();
    assert_eq!(out.desired.n_frames(), 1);
    assert_eq!(out.rendered.wave.len(), p.model().mel_config.hop);
}

#[test]
fn unit_scale_is_copy_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let utt = &common::utterances(1)[0];
    let track = p.analyse(&utt.wave).unwrap();
    let copy = p.manipulate(&track, &ManipulationSpec::keep(), 3).unwrap();
    for f in [Feature::F0, Feature::Centroid, Feature::Slope] {
        let out = p.manipulate(&track, &ManipulationSpec::scale(f, 1.0), 3).unwrap();
        assert_eq!(out.rendered.wave, copy.rendered.wave, "{f}");
    }
    let other_seed = p.manipulate(&track, &ManipulationSpec::keep(), 4).unwrap();
    assert_eq!(other_seed.desired, copy.desired);
}

#[test]
fn coupled_formant_scaling_needs_a_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let track = p.analyse(&common::utterances(1)[0].wave).unwrap();
    let err = p.manipulate(&track, &ManipulationSpec::scale(Feature::F1, 1.2), 0).unwrap_err();
    assert!(matches!(err.root(), Error::Manipulation(_)), "{err}");
    let spec = ManipulationSpec::scale(Feature::F1, 1.05).with_policy(CouplingPolicy::Independent);
    match p.manipulate(&track, &spec, 0) {
        Ok(out) => assert_eq!(out.desired.column(Feature::F2), track.column(Feature::F2)),
        Err(e) => assert!(matches!(e.root(), Error::Manipulation(_)), "{e}"),
    }
}

#[test]
fn identity_system_scores_zero_and_unit_cells_match_copy_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let utts = common::utterances(3);
    let mut ev = Evaluator::for_pipeline(&p, 9);
    ev.bootstrap = 50;
    let full = FullPipeline { pipeline: &p, seed: 9 };
    let voc = VocoderOnly { vocoder: p.vocoder() };
    let recon = ev.copy_synthesis_error(&utts, &[&full, &voc, &Identity]).unwrap();
    assert_eq!(recon.utterances.len(), 3);
    let id = recon.system("identity").unwrap();
    assert!(id.features.iter().all(|i| i.mean == 0.0));

    let sweep = ev.manipulation_sweep(&p, &utts, &[Feature::F0, Feature::Slope], &[0.9, 1.0, 1.1]).unwrap();
    assert_eq!(sweep.cells.len(), 6);
    let wb = recon.system("wavebender").unwrap();
    for f in [Feature::F0, Feature::Slope] {
        let cell = sweep.cell(f, 1.0).unwrap();
        for g in Feature::ALL {
            assert_eq!(cell.per_feature[g.index()], wb.feature(g).mean, "{f} row, {g} column");
        }
        assert!((cell.overall_incl.mean - wb.overall.mean).abs() < 1e-12);
    }

    // the whole evaluation is a function of its inputs and seed
    let again = ev.copy_synthesis_error(&utts, &[&full, &voc, &Identity]).unwrap();
    let sweep2 = ev.manipulation_sweep(&p, &utts, &[Feature::F0, Feature::Slope], &[0.9, 1.0, 1.1]).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_report(&a, &recon, &sweep).unwrap();
    emit_report(&b, &again, &sweep2).unwrap();
    for name in [RECON_TABLE, MANIP_TABLE, DISENTANGLE_TABLE] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}
