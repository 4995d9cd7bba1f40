//! The enhancement generator refines a mel spectrogram; the patch
//! discriminator scores it.

use candle_core::DType;
use ndarray::Array2;
use wavebender::mel::MelSpectrogram;
use wavebender::nn::gan::{Discriminator, GanConfig, Generator};
use wavebender::nn::wavebender::frames_to_tensor;
use wavebender::nn::ParamStore;

fn main() -> wavebender::Result<()> {
    let config = GanConfig::default();
    let mut store = ParamStore::new(DType::F32, 7);
    let generator = Generator::new(&config, &mut store, "gen")?;
    let discriminator = Discriminator::new(&config, &mut store, "disc")?;
    println!("generator + discriminator: {} parameters", store.num_parameters());

    let mel = MelSpectrogram {
        bins: Array2::from_shape_fn((120, 80), |(t, m)| ((t as f64 / 9.0).sin() - m as f64 / 40.0) * 0.8),
        frame_rate: 86.13,
        config_id: String::new(),
        normalized: true,
    };
    let enhanced = generator.enhance(&mel, 1)?;
    let change = (&enhanced.bins - &mel.bins).mapv(f64::abs).sum() / mel.bins.len() as f64;
    println!("freshly initialized generator changes the mel by {change:.2e} per bin");

    let scores = discriminator.forward_tensor(&frames_to_tensor(&mel.bins, DType::F32)?)?;
    println!("discriminator patch grid {:?}", scores.dims());
    Ok(())
}
