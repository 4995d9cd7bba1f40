//! Five speech parameters from a synthetic vowel, written as a track file.
//!
//! cargo run --example extract_features -- [out.csv]

use wavebender::corpus::synthetic::held_vowel;
use wavebender::{extract_parameters, ExtractOptions, Feature, MelConfig};

fn main() -> wavebender::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "vowel.csv".into());
    let wave = held_vowel(118.0, (720.0, 1240.0, 2500.0), 1.5, 22_050)?;
    let options = ExtractOptions::with_frame(MelConfig::default().frame_config());
    let track = extract_parameters(&wave, &options)?;

    let voiced = track.voicing().iter().filter(|&&v| v).count();
    println!("{} frames at {:.2} Hz, {voiced} voiced", track.n_frames(), track.frame_rate());
    for f in Feature::ALL {
        let col = track.column(f);
        let mean = col.sum() / col.len() as f64;
        println!("  {:<9} mean {mean:>12.5} {}", f.name(), f.unit());
    }
    if let Some(lf0) = track.median_voiced_log_f0() {
        println!("median f0 {:.1} Hz", lf0.exp());
    }
    track.write_csv(&out)?;
    println!("wrote {out}");
    Ok(())
}
