//! Pitch-shift and gain augmentation with parameters re-extracted from the
//! modified audio.

use wavebender::augmentation::{augment, AugmentDraw, AugmentationPolicy};
use wavebender::corpus::synthetic::held_vowel;
use wavebender::{ExtractOptions, MelConfig};

fn main() -> wavebender::Result<()> {
    let wave = held_vowel(120.0, (700.0, 1200.0, 2500.0), 1.0, 22_050)?;
    let options = ExtractOptions::with_frame(MelConfig::default().frame_config());
    let policy = AugmentationPolicy::default();

    for epoch in 0..4 {
        let draw = policy.draw("vowel", epoch);
        let out = augment(&wave, draw, &options)?;
        let f0 = out.track.median_voiced_log_f0().map_or(f64::NAN, f64::exp);
        println!(
            "epoch {epoch}: f0 x{:.3}, gain {:+.1} dB -> median f0 {f0:.1} Hz{}",
            draw.f0_scale,
            draw.gain_db,
            if out.fell_back { " (pitch shift fell back)" } else { "" }
        );
    }

    let quiet = augment(&wave, AugmentDraw { f0_scale: 1.0, gain_db: -12.0 }, &options)?;
    let plain = augment(&wave, AugmentDraw::IDENTITY, &options)?;
    let diff = (quiet.track.values() - plain.track.values()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    println!("gain-only change moves the features by at most {diff:.2e}");
    Ok(())
}
