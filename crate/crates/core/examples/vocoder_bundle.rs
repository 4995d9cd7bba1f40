//! Building, verifying and running vocoder bundles.

use wavebender::mel::{self, MelSpectrogram};
use wavebender::vocoder::hifigan::HifiGanConfig;
use wavebender::vocoder::{create_reference_bundle, verify_bundle, Vocoder, VocoderBundle};
use wavebender::{MelConfig, Waveform};

fn main() -> wavebender::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = MelConfig::default();

    let bundle = create_reference_bundle(dir.path().join("gl"), &config)?;
    let report = verify_bundle(dir.path().join("gl"), Some(&config))?;
    println!("{} {}: golden rms error {:.2e}", report.name, bundle.manifest().version, report.golden_rms_error);

    let tone: Vec<f64> = (0..22_050).map(|i| 0.4 * (i as f64 * 2.0 * std::f64::consts::PI * 200.0 / 22_050.0).sin()).collect();
    let wave = Waveform::new(tone, 22_050)?;
    let spec = mel::compute(&wave, &config)?;
    let out = bundle.synthesize(&spec)?;
    println!("{} frames -> {} samples (hop {})", spec.n_frames(), out.len(), config.hop);

    let silence = bundle.synthesize(&MelSpectrogram::silence(&config, 10))?;
    println!("silence peak {:.2e}", silence.peak());

    let hifi = HifiGanConfig::default();
    hifi.validate(config.hop)?;
    println!("HiFi-GAN V1 upsamples by {}", hifi.upsample_rates.iter().product::<usize>());

    let reloaded = VocoderBundle::load(dir.path().join("gl"))?;
    assert_eq!(reloaded.synthesize(&spec)?, out);
    Ok(())
}
