mod common;

use wavebender::eval::stimuli::{export_stimuli, Condition, BASELINE};
use wavebender::manipulation::ManipulationSpec;
use wavebender::{Feature, Waveform};

fn conditions() -> Vec<Condition> {
    vec![
        Condition::Natural,
        Condition::VocoderOnly,
        Condition::Manipulation {
            name: "f0_up".into(),
            spec: ManipulationSpec::scale(Feature::F0, 1.2),
        },
    ]
}

#[test]
fn export_is_counterbalanced_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let utts = common::utterances(2);
    let out = dir.path().join("stim");
    let set = export_stimuli(&p, &utts, &conditions(), &out, 5).unwrap();

    assert_eq!(set.trials.len(), 6);
    let baseline_first = set.trials.iter().filter(|t| t.a == BASELINE).count();
    assert_eq!(baseline_first, 3);
    assert!(set.trials.iter().all(|t| (t.a == BASELINE) != (t.b == BASELINE)));
    for t in &set.trials {
        for side in ["A", "B"] {
            let w = Waveform::read_wav(out.join("stimuli").join(format!("{}_{side}.wav", t.trial))).unwrap();
            assert!(!w.is_empty());
        }
    }
    for u in &utts {
        assert!(out.join("reference").join(format!("{}.wav", u.id)).exists());
    }
    let sheet = std::fs::read_to_string(out.join("rating_sheet.tsv")).unwrap();
    assert_eq!(sheet.lines().count(), 7);

    let again = dir.path().join("again");
    export_stimuli(&p, &utts, &conditions(), &again, 5).unwrap();
    for f in ["key.tsv", "rating_sheet.tsv", "stimuli.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn duplicate_condition_names_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::pipeline(dir.path());
    let mut c = conditions();
    c.push(Condition::Natural);
    assert!(export_stimuli(&p, &common::utterances(1), &c, dir.path().join("s"), 0).is_err());
}
