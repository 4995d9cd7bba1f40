//! Log-mel front-end shared with the vocoder, frame-aligned with the
//! parameter track.

use wavebender::corpus::synthetic::sawtooth;
use wavebender::mel::{self, MelFilterbank};
use wavebender::{extract_parameters, ExtractOptions, MelConfig};

fn main() -> wavebender::Result<()> {
    let config = MelConfig::default();
    let wave = sawtooth(220.0, 1.0, 0.5, config.sample_rate)?;
    let spec = mel::compute(&wave, &config)?;
    let track = extract_parameters(&wave, &ExtractOptions::with_frame(config.frame_config()))?;
    println!("mel {} x {}, track {} frames", spec.n_frames(), spec.n_mels(), track.n_frames());
    assert_eq!(spec.n_frames(), track.n_frames());

    let fb = MelFilterbank::new(&config);
    let frame = spec.bins.row(spec.n_frames() / 2);
    let (peak, value) = frame
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    println!("loudest band {peak} (centre {:.0} Hz), log energy {value:.2}", fb.centers[peak]);
    println!("front-end fingerprint {}", config.fingerprint());
    Ok(())
}
