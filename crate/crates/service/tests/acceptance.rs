//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `EXPECTED_FAILURES`.
//!
//! Set `ACCEPTANCE_DIR` to keep the desk-scale run between invocations; the
//! training step is skipped when a finished run is already there.
//! `ACCEPTANCE_ONLY=name,name` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use candle_core::{DType, Device, Tensor};
use http_body_util::BodyExt;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;
use wavebender::corpus::synthetic::{desk_corpus, held_vowel, sawtooth, DeskCorpusConfig};
use wavebender::corpus::{Corpus, Utterance};
use wavebender::dsp::correlation::spearman_correlation;
use wavebender::dsp::interpolate_unvoiced;
use wavebender::eval::{feature_errors, Evaluator, ManipulationReport, ReconstructionReport, System};
use wavebender::manipulation::{coupling, Pipeline};
use wavebender::model::WavebenderModel;
use wavebender::nn::gradcheck::gradient_check;
use wavebender::nn::loss::{composite_objective, lsgan_d_loss, lsgan_g_loss, xsigmoid_loss, ObjectiveWeights};
use wavebender::nn::{ParamStore, WavebenderNet, WavebenderNetConfig};
use wavebender::track::{TrackMeta, N_FEATURES};
use wavebender::trainer::{checkpoint, Phase, Precision, Trainer, TrainingConfig};
use wavebender::vocoder::VocoderBundle;
use wavebender::{extract_parameters, ExtractOptions, Feature, MelConfig, NormalizationStats, ParameterTrack, Waveform};
use wavebender_service::api::{router, AppState, SynthesizeResponse, VocoderInfo};
use wavebender_service::config::{ProjectConfig, ServiceConfig};

/// Criteria known not to hold at desk scale; see the decisions ledger.
const EXPECTED_FAILURES: &[&str] = &["desk_scale_end_to_end"];

type Check = Result<String, String>;

struct Outcome {
    name: &'static str,
    result: Check,
}

fn run(name: &'static str, budget: Duration, f: impl FnOnce() -> Check) -> Outcome {
    let start = Instant::now();
    let result = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let elapsed = start.elapsed();
    let result = match result {
        Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {:?} budget", budget)),
        other => other,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name} ({:.1} s): {detail}", elapsed.as_secs_f64());
    Outcome { name, result }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn frame_options() -> ExtractOptions {
    ExtractOptions::with_frame(MelConfig::default().frame_config())
}

// ---------------------------------------------------------------- DSP

fn dsp_oracles() -> Check {
    let options = frame_options();

    let saw = sawtooth(100.0, 1.0, 0.5, 22_050).map_err(e2s)?;
    let track = extract_parameters(&saw, &options).map_err(e2s)?;
    let voiced: Vec<f64> = track
        .column(Feature::F0)
        .iter()
        .zip(track.voicing())
        .filter(|(_, &v)| v)
        .map(|(lf0, _)| lf0.exp())
        .collect();
    ensure(voiced.len() * 10 >= track.n_frames() * 9, || {
        format!("only {} of {} sawtooth frames voiced", voiced.len(), track.n_frames())
    })?;
    let worst = voiced.iter().map(|f| (f / 100.0 - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 0.02, || format!("sawtooth f0 off by {:.2}%", worst * 100.0))?;

    let mut gain_dev = 0.0f64;
    for wave in [saw.clone(), held_vowel(140.0, (650.0, 1100.0, 2600.0), 1.0, 22_050).map_err(e2s)?] {
        let base = extract_parameters(&wave, &options).map_err(e2s)?;
        for gain in [0.25, 0.5, 1.5] {
            let scaled = extract_parameters(&wave.scaled(gain), &options).map_err(e2s)?;
            ensure(scaled.voicing() == base.voicing(), || format!("voicing changed under gain {gain}"))?;
            let d = (scaled.values() - base.values()).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            gain_dev = gain_dev.max(d);
        }
    }
    ensure(gain_dev <= 1e-6, || format!("gain changed the features by {gain_dev:.3e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let values: Vec<Option<f64>> = (0..n)
            .map(|_| rng.gen_bool(0.4).then(|| rng.gen_range(-3.0..3.0)))
            .collect();
        let filled = interpolate_unvoiced(&values);
        let known: Vec<(usize, f64)> = values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
        let Some(filled) = filled else {
            ensure(known.is_empty(), || "interpolation gave up with voiced frames".into())?;
            continue;
        };
        for (i, got) in filled.iter().enumerate() {
            let expected = match known.iter().position(|&(k, _)| k >= i) {
                Some(0) => known[0].1,
                None => known[known.len() - 1].1,
                Some(p) => {
                    let ((i0, v0), (i1, v1)) = (known[p - 1], known[p]);
                    if i1 == i {
                        v1
                    } else {
                        v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
                    }
                }
            };
            ensure((got - expected).abs() <= 1e-12, || format!("interpolated {got} where {expected} was expected"))?;
        }
    }

    let corpus = desk_corpus(&DeskCorpusConfig::default()).map_err(e2s)?;
    let mut frames = 0;
    for utt in corpus.utterances() {
        let t = extract_parameters(&utt.wave, &options).map_err(e2s)?;
        let bad = t.formant_order_violations(0.0);
        ensure(bad.is_empty(), || format!("{}: F2 < F1 at frames {bad:?}", utt.id))?;
        frames += t.n_frames();
    }
    Ok(format!(
        "sawtooth f0 within {:.2}%, gain deviation {gain_dev:.1e}, F2 >= F1 over {frames} desk frames",
        worst * 100.0
    ))
}

// ---------------------------------------------------------------- losses and metrics

fn tensor(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn brute_xsigmoid(p: &[f64], t: &[f64]) -> f64 {
    // e·tanh(e/2) written as e·(eᵉ − 1)/(eᵉ + 1)
    let sum: f64 = p
        .iter()
        .zip(t)
        .map(|(a, b)| {
            let e = a - b;
            let x = e.abs().min(700.0).exp();
            e.abs() * (x - 1.0) / (x + 1.0)
        })
        .sum();
    sum / p.len() as f64
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn random_track(rng: &mut ChaCha8Rng, t: usize) -> ParameterTrack {
    let values = Array2::from_shape_fn((t, N_FEATURES), |(_, c)| match c {
        0 => (rng.gen_range(300.0f64..900.0) / 25.0).round() * 25.0,
        1 => rng.gen_range(1000.0..2500.0),
        2 => rng.gen_range(4.4f64..5.4),
        3 => (rng.gen_range(800.0f64..4000.0) / 100.0).round() * 100.0,
        _ => rng.gen_range(-0.004..0.0),
    });
    let voicing = (0..t).map(|_| rng.gen_bool(0.7)).collect();
    ParameterTrack::new(values, voicing, 86.13, false, TrackMeta::default()).unwrap()
}

/// Returns the clip pitch-shifted by resampling and attenuated, so every
/// feature moves.
struct Detuned;

impl System for Detuned {
    fn name(&self) -> &str {
        "detuned"
    }

    fn synthesize(&self, utt: &Utterance, _: &ParameterTrack) -> wavebender::Result<Waveform> {
        let s = utt.wave.samples();
        let out: Vec<f64> = (0..s.len())
            .map(|i| {
                let x = i as f64 * 1.06;
                let (k, f) = (x.floor() as usize, x.fract());
                let a = s.get(k).copied().unwrap_or(0.0);
                let b = s.get(k + 1).copied().unwrap_or(0.0);
                0.7 * (a + (b - a) * f)
            })
            .collect();
        Waveform::new(out, utt.wave.sample_rate())
    }
}

fn loss_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = BTreeMap::<&str, f64>::new();
    let mut note = |k: &'static str, d: f64| {
        let w = worst.entry(k).or_insert(0.0);
        *w = w.max(d);
    };

    for _ in 0..20 {
        let n = rng.gen_range(1..400);
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let got = scalar(&xsigmoid_loss(&tensor(&p, &[1, n]), &tensor(&t, &[1, n])).map_err(e2s)?);
        note("xsigmoid_loss", (got - brute_xsigmoid(&p, &t)).abs());

        let real: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let fake: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let mut d_ref = 0.0;
        let mut g_ref = 0.0;
        for i in 0..n {
            d_ref += 0.5 * (real[i] - 1.0) * (real[i] - 1.0) / n as f64 + 0.5 * fake[i] * fake[i] / n as f64;
            g_ref += 0.5 * (fake[i] - 1.0) * (fake[i] - 1.0) / n as f64;
        }
        let (rt, ft) = (tensor(&real, &[n]), tensor(&fake, &[n]));
        note("lsgan_d", (scalar(&lsgan_d_loss(&rt, &ft).map_err(e2s)?) - d_ref).abs());
        note("lsgan_g", (scalar(&lsgan_g_loss(&ft).map_err(e2s)?) - g_ref).abs());

        let post: Vec<f64> = (0..n).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let w = ObjectiveWeights {
            recon_pre: rng.gen_range(0.0..2.0),
            recon_post: rng.gen_range(0.0..2.0),
            adversarial: rng.gen_range(0.0..2.0),
        };
        let g = rng.gen_range(0.0..2.0);
        let (total, _, _) = composite_objective(
            &tensor(&p, &[n]),
            &tensor(&post, &[n]),
            &tensor(&t, &[n]),
            &Tensor::new(g, &Device::Cpu).unwrap(),
            w,
        )
        .map_err(e2s)?;
        let expected = w.recon_pre * brute_xsigmoid(&p, &t) + w.recon_post * brute_xsigmoid(&post, &t) + w.adversarial * g;
        note("composite_objective", (scalar(&total) - expected).abs());
    }

    for _ in 0..5 {
        let tracks: Vec<ParameterTrack> = (0..3)
            .map(|_| {
                let t = rng.gen_range(5..60);
                random_track(&mut rng, t)
            })
            .collect();
        let m = spearman_correlation(&tracks).map_err(e2s)?;
        for a in Feature::ALL {
            for b in Feature::ALL {
                let x: Vec<f64> = tracks.iter().flat_map(|t| t.column(a).to_vec()).collect();
                let y: Vec<f64> = tracks.iter().flat_map(|t| t.column(b).to_vec()).collect();
                let rho = brute_pearson(&brute_ranks(&x), &brute_ranks(&y));
                note("spearman_correlation", (m.get(a, b) - rho).abs());
            }
        }
    }

    // copy-synthesis error: the report against frame-by-frame recomputation
    let corpus = desk_corpus(&DeskCorpusConfig {
        n_utterances: 3,
        min_secs: 0.8,
        max_secs: 1.0,
        seed: 4,
        ..DeskCorpusConfig::default()
    })
    .map_err(e2s)?;
    let options = frame_options();
    let refs: Vec<ParameterTrack> = corpus.utterances().iter().map(|u| extract_parameters(&u.wave, &options).unwrap()).collect();
    let stats = NormalizationStats::fit(&refs).map_err(e2s)?;
    let mut evaluator = Evaluator::new(options.clone(), stats.clone(), 3);
    evaluator.bootstrap = 0;
    let report = evaluator.copy_synthesis_error(corpus.utterances(), &[&Detuned]).map_err(e2s)?;
    let sys = &report.systems[0];
    let mut sums = [0.0; N_FEATURES];
    let mut frames = 0usize;
    for (utt, reference) in corpus.utterances().iter().zip(&refs) {
        let out = extract_parameters(&Detuned.synthesize(utt, reference).unwrap(), &options).unwrap();
        let t = reference.n_frames().min(out.n_frames());
        for i in 2..t - 2 {
            for f in Feature::ALL {
                let (m, s) = (stats.mean[f.index()], stats.std[f.index()]);
                let d = (reference.column(f)[i] - m) / s - (out.column(f)[i] - m) / s;
                sums[f.index()] += d * d;
            }
        }
        frames += t - 4;
        let single = feature_errors(&utt.id, reference, &out, &stats, 2).map_err(e2s)?;
        ensure(single.frames == t - 4, || "frame count".into())?;
    }
    for f in Feature::ALL {
        let expected = sums[f.index()] / frames as f64;
        note("copy_synthesis_error", (sys.feature(f).mean - expected).abs() / expected.max(1.0));
    }
    let overall = sums.iter().sum::<f64>() / N_FEATURES as f64 / frames as f64;
    note("copy_synthesis_error", (sys.overall.mean - overall).abs() / overall.max(1.0));

    let bad: Vec<String> = worst.iter().filter(|(_, &d)| !(d <= 1e-10)).map(|(k, d)| format!("{k} {d:.2e}")).collect();
    ensure(bad.is_empty(), || format!("beyond 1e-10: {}", bad.join(", ")))?;
    Ok(worst.iter().map(|(k, d)| format!("{k} {d:.0e}")).collect::<Vec<_>>().join(", "))
}

// ---------------------------------------------------------------- network

fn random_input(rng: &mut ChaCha8Rng, b: usize, c: usize, t: usize, dtype: DType) -> Tensor {
    let data: Vec<f64> = (0..b * c * t).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(data, (b, c, t), &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

fn network_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let configs = [
        ("paper", WavebenderNetConfig::default()),
        ("desk", TrainingConfig::desk().net),
        ("tiny", TrainingConfig::tiny().net),
    ];
    for (label, cfg) in &configs {
        let mut store = ParamStore::new(DType::F32, 1);
        let net = WavebenderNet::new(cfg.clone(), &mut store, "net").map_err(e2s)?;
        for t in [1, 7, 192, 1931] {
            let y = net.forward_tensor(&random_input(&mut rng, 1, cfg.in_channels, t, DType::F32), true).map_err(e2s)?;
            ensure(y.dims() == [1, cfg.out_channels(), t], || format!("{label}: T={t} gave {:?}", y.dims()))?;
        }
    }

    // an item's output must not depend on the rest of the batch
    let cfg = TrainingConfig::desk().net;
    let mut store = ParamStore::new(DType::F64, 2);
    let net = WavebenderNet::new(cfg.clone(), &mut store, "net").map_err(e2s)?;
    let a = random_input(&mut rng, 1, cfg.in_channels, 64, DType::F64);
    let b = (random_input(&mut rng, 1, cfg.in_channels, 64, DType::F64) * 40.0).unwrap();
    let alone = net.forward_tensor(&a, true).map_err(e2s)?;
    let batched = net.forward_tensor(&Tensor::cat(&[&a, &b], 0).unwrap(), true).map_err(e2s)?;
    let diff = (alone - batched.narrow(0, 0, 1).unwrap())
        .unwrap()
        .abs()
        .unwrap()
        .flatten_all()
        .unwrap()
        .max(0)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap();
    ensure(diff <= 1e-5, || format!("batch dependence {diff:.2e}"))?;

    let mut store = ParamStore::new(DType::F64, 11);
    let tiny = WavebenderNet::new(WavebenderNetConfig::tiny(4), &mut store, "net").map_err(e2s)?;
    let x = random_input(&mut rng, 3, 6, 10, DType::F64);
    let target = random_input(&mut rng, 3, 4, 10, DType::F64);
    let report = gradient_check(&tiny, &store, &x, &target, 1e-4).map_err(e2s)?;
    ensure(report.max_relative_error < 1e-3, || format!("gradient check {report:?}"))?;

    let mut skip_cfg = WavebenderNetConfig::tiny(4);
    skip_cfg.widths = vec![8, 8, 8, 4];
    skip_cfg.long_skips = vec![(1, 4)];
    let mut store = ParamStore::new(DType::F64, 12);
    let skips = WavebenderNet::new(skip_cfg, &mut store, "net").map_err(e2s)?;
    let skip_report = gradient_check(&skips, &store, &x, &target, 1e-4).map_err(e2s)?;
    ensure(skip_report.max_relative_error < 1e-3, || format!("gradient check with skips {skip_report:?}"))?;

    Ok(format!(
        "shapes hold for T in {{1, 7, 192, 1931}}, batch dependence {diff:.1e}, gradient rel. error {:.1e} / {:.1e}",
        report.max_relative_error, skip_report.max_relative_error
    ))
}

// ---------------------------------------------------------------- overfit and degenerate joint step

fn short_corpus(n: usize, seed: u64) -> Corpus {
    desk_corpus(&DeskCorpusConfig {
        n_utterances: n,
        min_secs: 1.0,
        max_secs: 1.4,
        seed,
        ..DeskCorpusConfig::default()
    })
    .unwrap()
}

fn net_snapshot(store: &ParamStore) -> BTreeMap<String, Vec<f64>> {
    store.snapshot().unwrap().into_iter().filter(|(k, _)| k.starts_with("net.")).collect()
}

fn max_diff(a: &BTreeMap<String, Vec<f64>>, b: &BTreeMap<String, Vec<f64>>) -> f64 {
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    a.iter()
        .flat_map(|(k, va)| va.iter().zip(&b[k]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

fn overfit() -> Check {
    let corpus = short_corpus(1, 31);
    let config = TrainingConfig {
        pretrain_epochs: 200,
        joint_epochs: 0,
        ..TrainingConfig::tiny()
    };
    let mut trainer = Trainer::with_split(config, corpus.utterances().to_vec(), Vec::new(), None).map_err(e2s)?;
    trainer.pretrain().map_err(e2s)?;
    let history = trainer.history();
    let (first, last) = (history[0].train_loss, history[history.len() - 1].train_loss);
    let ratio = last / first;
    ensure(history.len() == 200 && ratio < 0.05, || {
        format!("train XSigmoid {first:.4} -> {last:.4} ({:.1}%) over {} epochs", ratio * 100.0, history.len())
    })?;

    // joint training with the adversarial term and noise switched off reaches
    // the same loss after one step as pretraining from the same state
    let corpus = short_corpus(4, 32);
    let base = TrainingConfig {
        precision: Precision::F64,
        ..TrainingConfig::tiny()
    };
    let pre_cfg = TrainingConfig {
        pretrain_epochs: 2,
        joint_epochs: 0,
        ..base.clone()
    };
    let mut joint_cfg = TrainingConfig {
        pretrain_epochs: 0,
        joint_epochs: 2,
        ..base
    };
    joint_cfg.gan.adversarial_weight = 0.0;
    joint_cfg.gan.noise_std = 0.0;
    let utts = corpus.utterances().to_vec();
    let mut a = Trainer::with_split(pre_cfg, utts.clone(), Vec::new(), None).map_err(e2s)?;
    let mut b = Trainer::with_split(joint_cfg, utts, Vec::new(), None).map_err(e2s)?;
    ensure(max_diff(&net_snapshot(a.store()), &net_snapshot(b.store())) == 0.0, || "different initial weights".into())?;
    let (a0, b0) = (a.step().map_err(e2s)?, b.step().map_err(e2s)?);
    ensure(b0.phase == Phase::Joint, || format!("second trainer ran {:?}", b0.phase))?;
    let weights = net_diff(&a, &b);
    let (a1, b1) = (a.step().map_err(e2s)?, b.step().map_err(e2s)?);
    let diff = (a0.loss_pre - b0.loss_pre).abs().max((a1.loss_pre - b1.loss_pre).abs());
    ensure(diff <= 1e-6, || {
        format!(
            "loss after one degenerate joint step {:.9} vs pretraining {:.9} (diff {diff:.2e})",
            b1.loss_pre, a1.loss_pre
        )
    })?;
    Ok(format!(
        "train XSigmoid {first:.4} -> {last:.5} ({:.2}%), degenerate joint loss within {diff:.1e} (weights {weights:.1e})",
        ratio * 100.0
    ))
}

// ---------------------------------------------------------------- determinism

fn net_diff(a: &Trainer, b: &Trainer) -> f64 {
    max_diff(&net_snapshot(a.store()), &net_snapshot(b.store()))
}

fn resume() -> Check {
    let corpus = short_corpus(6, 41);
    let dir = tempfile::tempdir().map_err(e2s)?;
    let config = TrainingConfig {
        pretrain_epochs: 1,
        joint_epochs: 4,
        split_fraction: 0.8,
        ..TrainingConfig::tiny()
    };
    let mut a = Trainer::new(config.clone(), &corpus, None).map_err(e2s)?;
    let split = a.batches_per_epoch() as u64;
    let mut report = Vec::new();
    // the first window crosses from pretraining into joint training, the
    // second starts inside the joint phase
    for at in [split - 1, split + 1] {
        while a.state().step < at {
            a.step().map_err(e2s)?;
        }
        let path = dir.path().join(format!("at_{at}"));
        a.checkpoint().map_err(e2s)?.save(&path).map_err(e2s)?;
        let mut cont = Trainer::resume(&corpus, &path, None, None).map_err(e2s)?;
        let mut fresh = Trainer::new(config.clone(), &corpus, None).map_err(e2s)?;
        while fresh.state().step < at {
            fresh.step().map_err(e2s)?;
        }
        for _ in 0..3 {
            cont.step().map_err(e2s)?;
            fresh.step().map_err(e2s)?;
        }
        let d = max_diff(&cont.store().snapshot().unwrap(), &fresh.store().snapshot().unwrap());
        ensure(d <= 1e-6, || format!("resumed at step {at}: divergence {d:.2e} after 3 steps"))?;
        report.push(format!("step {at}: {d:.1e}"));
    }
    Ok(format!("divergence after 3 steps {}", report.join(", ")))
}

// ---------------------------------------------------------------- desk-scale run

const DESK_UTTERANCES: usize = 50;
const SEED: u64 = 7;

struct Desk {
    dir: PathBuf,
    config: PathBuf,
    recon: ReconstructionReport,
    manip: ManipulationReport,
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wavebender")).args(args).output().map_err(e2s)?;
    if !out.status.success() {
        return Err(format!(
            "wavebender {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn desk_run(root: &Path) -> Result<Desk, String> {
    let dir = root.join("desk");
    let config = root.join("desk.toml");
    let mut project = ProjectConfig::default();
    project.training = TrainingConfig {
        split_fraction: 0.8,
        ..TrainingConfig::desk()
    };
    project.save(&config).map_err(e2s)?;
    let n = DESK_UTTERANCES.to_string();
    let seed = SEED.to_string();
    if !dir.join("best").join(checkpoint::META_FILE).exists() || !dir.join("coupling").exists() {
        cli(&["fetch-vocoder", "--reference", "--out", s(&root.join("vocoder"))])?;
        cli(&["--config", s(&config), "--seed", &seed, "train", "--synthetic", &n, "--out", s(&dir)])?;
    }
    let report = root.join("report");
    if !report.join("summary.json").exists() {
        cli(&[
            "--config",
            s(&config),
            "--seed",
            &seed,
            "evaluate",
            "--synthetic",
            &n,
            "--checkpoint",
            s(&dir),
            "--vocoder",
            s(&root.join("vocoder")),
            "--out",
            s(&report),
        ])?;
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(report.join("summary.json")).map_err(e2s)?).map_err(e2s)?;
    Ok(Desk {
        recon: serde_json::from_value(summary["reconstruction"].clone()).map_err(e2s)?,
        manip: serde_json::from_value(summary["manipulation"].clone()).map_err(e2s)?,
        dir,
        config,
    })
}

const FLAT: [Feature; 3] = [Feature::F0, Feature::Centroid, Feature::Slope];
const FORMANTS: [Feature; 2] = [Feature::F1, Feature::F2];

fn desk_scale(desk: &Result<Desk, String>) -> Check {
    let desk = desk.as_ref().map_err(|e| format!("desk run failed: {e}"))?;
    let full = desk.recon.system("wavebender").ok_or("no wavebender system in the report")?;
    let voc = desk.recon.system("vocoder_only").ok_or("no vocoder_only system in the report")?;
    let mut failures = Vec::new();

    let ratios: Vec<String> = Feature::ALL
        .iter()
        .map(|&f| {
            let r = full.feature(f).mean / voc.feature(f).mean;
            if !(r <= 2.0) {
                failures.push(format!("(a) {f}: pipeline {:.4} vs vocoder {:.4}", full.feature(f).mean, voc.feature(f).mean));
            }
            format!("{f} {r:.2}")
        })
        .collect();

    for &f in &desk.manip.features {
        match desk.manip.cell(f, 1.0) {
            None => failures.push(format!("(b) no m=1 cell for {f}")),
            Some(c) => {
                if !c.overall_ci.contains(full.overall.mean) {
                    failures.push(format!(
                        "(b) {f} at m=1: copy synthesis {:.4} outside [{:.4}, {:.4}]",
                        full.overall.mean, c.overall_ci.low, c.overall_ci.high
                    ));
                }
            }
        }
    }

    let excess = |fs: &[Feature]| -> Option<f64> {
        let v: Option<Vec<f64>> = fs.iter().map(|&f| desk.manip.excess_error(f)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (flat, formant) = (excess(&FLAT), excess(&FORMANTS));
    match (flat, formant) {
        (Some(a), Some(b)) if a < b => {}
        _ => failures.push(format!("(b) excess error f0/centroid/slope {flat:?} vs F1/F2 {formant:?}")),
    }
    let detail = format!(
        "pipeline/vocoder MSE ratios {}; excess error {:.4} vs {:.4}; {} held-out clips",
        ratios.join(", "),
        flat.unwrap_or(f64::NAN),
        formant.unwrap_or(f64::NAN),
        desk.recon.utterances.len()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn identical_reports(desk: &Result<Desk, String>, root: &Path) -> Check {
    let desk = desk.as_ref().map_err(|e| format!("desk run failed: {e}"))?;
    let n = DESK_UTTERANCES.to_string();
    let seed = SEED.to_string();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(format!("repeat_{run}"));
        cli(&[
            "--config",
            s(&desk.config),
            "--seed",
            &seed,
            "evaluate",
            "--synthetic",
            &n,
            "--checkpoint",
            s(&desk.dir),
            "--vocoder",
            s(&root.join("vocoder")),
            "--limit",
            "4",
            "--m-set",
            "0.8,1.0,1.2",
            "--bootstrap",
            "200",
            "--out",
            s(&out),
        ])?;
        outputs.push(dir_contents(&out));
    }
    ensure(outputs[0].len() >= 3, || format!("only {} report files", outputs[0].len()))?;
    let differing: Vec<&String> = outputs[0].iter().filter(|(k, v)| outputs[1].get(*k) != Some(v)).map(|(k, _)| k).collect();
    ensure(differing.is_empty() && outputs[0].len() == outputs[1].len(), || format!("reports differ: {differing:?}"))?;
    Ok(format!("{} report files byte-identical across two invocations", outputs[0].len()))
}

// ---------------------------------------------------------------- service

async fn request(app: &Arc<AppState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = router(app.clone()).oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service_contract(desk: &Result<Desk, String>, root: &Path) -> Check {
    let desk = desk.as_ref().map_err(|e| format!("desk run failed: {e}"))?;
    let model = WavebenderModel::load(checkpoint::resolve(&desk.dir).map_err(e2s)?).map_err(e2s)?;
    let bundle = VocoderBundle::load(root.join("vocoder")).map_err(e2s)?;
    let info = VocoderInfo::from_bundle(&bundle);
    let pipeline = Pipeline::new(Arc::new(model), Arc::new(bundle))
        .and_then(|p| p.with_predictors(coupling::load_all(desk.dir.join("coupling"))?))
        .map_err(e2s)?;
    let stats = pipeline.model().stats.clone();
    let app = Arc::new(AppState::new(Arc::new(pipeline), info, ServiceConfig::default()).map_err(e2s)?);

    // the recorded envelope: worst per-clip copy-synthesis error of the
    // checkpoint, per feature
    let full = desk.recon.system("wavebender").ok_or("no wavebender system in the report")?;
    let mut envelope = [0.0f64; N_FEATURES];
    for u in &full.per_utterance {
        for f in Feature::ALL {
            envelope[f.index()] = envelope[f.index()].max(u.mse(f));
        }
    }

    let corpus = desk_corpus(&DeskCorpusConfig::default()).map_err(e2s)?;
    let ids: Vec<String> = desk.recon.utterances.iter().take(4).cloned().collect();
    let runtime = tokio::runtime::Runtime::new().map_err(e2s)?;
    let mut sums = [0.0; N_FEATURES];
    let mut frames = 0;
    let mut conflict = None;
    for id in &ids {
        let utt = corpus.get(id).ok_or_else(|| format!("{id} missing from the corpus"))?;
        let body = utt.wave.to_wav_bytes().map_err(e2s)?;
        let (status, bytes) = runtime.block_on(request(&app, Request::post("/v1/analyze").body(Body::from(body)).unwrap()));
        ensure(status == StatusCode::OK, || format!("analyze {id}: {status} {}", String::from_utf8_lossy(&bytes)))?;
        let analyzed: Value = serde_json::from_slice(&bytes).map_err(e2s)?;
        let session = analyzed["session_id"].as_str().unwrap_or_default().to_string();
        let req = json!({ "session_id": session, "spec": {}, "seed": 99 });
        let (status, bytes) = runtime.block_on(request(
            &app,
            Request::post("/v1/synthesize")
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&req).unwrap()))
                .unwrap(),
        ));
        ensure(status == StatusCode::OK, || format!("synthesize {id}: {status} {}", String::from_utf8_lossy(&bytes)))?;
        let synth: SynthesizeResponse = serde_json::from_slice(&bytes).map_err(e2s)?;
        ensure(synth.spec.is_keep(), || "spec was not echoed as all-keep".into())?;
        let desired = synth.desired.to_track().map_err(e2s)?;
        let realized = synth.realized.to_track().map_err(e2s)?;
        let errs = feature_errors(id, &desired, &realized, &stats, 2).map_err(e2s)?;
        for f in Feature::ALL {
            sums[f.index()] += errs.sq_sum[f.index()];
        }
        frames += errs.frames;

        if conflict.is_none() {
            let req = json!({ "session_id": session, "seed": 99, "fingerprints": { "model": "0000000000000000" } });
            let (status, _) = runtime.block_on(request(
                &app,
                Request::post("/v1/synthesize")
                    .header("content-type", "application/json")
                    .body(Body::from(serde_json::to_vec(&req).unwrap()))
                    .unwrap(),
            ));
            conflict = Some(status);
        }
    }
    ensure(conflict == Some(StatusCode::CONFLICT), || format!("fingerprint mismatch gave {conflict:?}"))?;
    let mut outside = Vec::new();
    let mut detail = Vec::new();
    for f in Feature::ALL {
        let mse = sums[f.index()] / frames as f64;
        if !(mse <= envelope[f.index()]) {
            outside.push(format!("{f} {mse:.4} > {:.4}", envelope[f.index()]));
        }
        detail.push(format!("{f} {mse:.3}/{:.3}", envelope[f.index()]));
    }
    ensure(outside.is_empty(), || format!("outside the envelope: {}", outside.join(", ")))?;
    Ok(format!("round-trip MSE within envelope ({}), mismatch -> 409", detail.join(", ")))
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let kept = std::env::var_os("ACCEPTANCE_DIR").map(PathBuf::from);
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let selected = |name: &str| only.as_ref().is_none_or(|o| o.iter().any(|n| n == name));
    let temp = tempfile::tempdir().expect("temporary directory");
    let root = kept.clone().unwrap_or_else(|| temp.path().to_path_buf());
    std::fs::create_dir_all(&root).expect("work directory");

    let min = |m: u64| Duration::from_secs(60 * m);
    let desk = std::cell::OnceCell::new();
    let desk = || {
        desk.get_or_init(|| {
            let start = Instant::now();
            let run = desk_run(&root);
            println!("desk-scale training and evaluation took {:.1} min", start.elapsed().as_secs_f64() / 60.0);
            (run, start.elapsed())
        })
    };
    type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("dsp_oracles", Box::new(|| run("dsp_oracles", min(2), dsp_oracles))),
        ("loss_metric_oracles", Box::new(|| run("loss_metric_oracles", min(1), loss_oracles))),
        ("network_correctness", Box::new(|| run("network_correctness", min(5), network_correctness))),
        ("overfit_and_degenerate_joint", Box::new(|| run("overfit_and_degenerate_joint", min(15), overfit))),
        (
            "desk_scale_end_to_end",
            Box::new(|| {
                let (d, took) = desk();
                run("desk_scale_end_to_end", min(240).saturating_sub(*took), || desk_scale(d))
            }),
        ),
        (
            "determinism_resume",
            Box::new(|| {
                let (d, _) = desk();
                run("determinism_resume", min(75), || {
                    let resumed = resume()?;
                    let reports = identical_reports(d, &root)?;
                    Ok(format!("{resumed}; {reports}"))
                })
            }),
        ),
        (
            "service_contract",
            Box::new(|| {
                let (d, _) = desk();
                run("service_contract", min(10), || service_contract(d, &root))
            }),
        ),
    ];
    let mut outcomes = Vec::new();
    for (name, check) in criteria {
        if selected(name) {
            outcomes.push(check());
        } else {
            println!("SKIP {name}");
        }
    }

    let unexpected: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.result.is_err() && !EXPECTED_FAILURES.contains(&o.name))
        .map(|o| o.name)
        .collect();
    let passed = outcomes.iter().filter(|o| o.result.is_ok()).count();
    println!("{passed}/{} criteria passed", outcomes.len());
    drop(temp);
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
