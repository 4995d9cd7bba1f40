//! Analysis followed by resynthesis with untouched parameters.
//!
//! cargo run --release --example copy_synthesis -- [checkpoint_dir vocoder_dir in.wav out.wav]

mod common;

use std::sync::Arc;

use wavebender::manipulation::Pipeline;
use wavebender::model::WavebenderModel;
use wavebender::trainer::checkpoint;
use wavebender::vocoder::VocoderBundle;
use wavebender::Waveform;

fn main() -> wavebender::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = tempfile::tempdir()?;
    let (pipeline, wave, out) = match args.as_slice() {
        [ckpt, vocoder, input, output] => {
            let model = WavebenderModel::load(checkpoint::resolve(ckpt.as_ref())?)?;
            let bundle = VocoderBundle::load(vocoder)?;
            let pipeline = Pipeline::new(Arc::new(model), Arc::new(bundle))?;
            (pipeline, Waveform::read_wav(input)?, output.clone())
        }
        _ => {
            let corpus = common::corpus(6)?;
            let pipeline = common::quick_pipeline(&corpus, dir.path())?;
            (pipeline, corpus.utterances()[0].wave.clone(), "copy_synthesis.wav".into())
        }
    };

    let result = pipeline.copy_synthesize(&wave, 0)?;
    let again = pipeline.copy_synthesize(&wave, 0)?;
    assert_eq!(result.rendered.wave, again.rendered.wave);
    println!(
        "{:.2} s in, {} frames, {} samples out (rms {:.3})",
        wave.duration_secs(),
        result.desired.n_frames(),
        result.rendered.wave.len(),
        result.rendered.wave.rms()
    );
    result.rendered.wave.write_wav(&out)?;
    println!("wrote {out}");
    Ok(())
}
