//! The HTTP API over an untrained tiny model and the reference vocoder.
//! Useful for front-end work without a trained checkpoint.
//!
//! cargo run -p wavebender-service --example serve -- [port]

use std::sync::Arc;

use wavebender::manipulation::Pipeline;
use wavebender::mel::MelNormalization;
use wavebender::model::WavebenderModel;
use wavebender::trainer::TrainingConfig;
use wavebender::vocoder::create_reference_bundle;
use wavebender::NormalizationStats;
use wavebender_service::api::{serve, AppState, VocoderInfo};
use wavebender_service::ServiceConfig;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let port: u16 = std::env::args().nth(1).map(|p| p.parse()).transpose()?.unwrap_or(8080);
    let dir = tempfile::tempdir()?;
    let cfg = TrainingConfig::tiny();
    let stats = NormalizationStats {
        mean: [550.0, 1600.0, 130f64.ln(), 2200.0, -0.002],
        std: [120.0, 250.0, 0.25, 600.0, 0.001],
    };
    let mel_norm = MelNormalization {
        mean: vec![-5.0; cfg.mel.n_mels],
        std: vec![2.0; cfg.mel.n_mels],
    };
    let model = WavebenderModel::initialized(&cfg, stats, mel_norm, 130f64.ln())?;
    let bundle = create_reference_bundle(dir.path().join("vocoder"), &cfg.mel)?;
    let info = VocoderInfo::from_bundle(&bundle);
    let pipeline = Pipeline::new(Arc::new(model), Arc::new(bundle))?;
    let state = Arc::new(AppState::new(Arc::new(pipeline), info, ServiceConfig::default())?);

    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    println!("listening on http://{}/v1/health (ctrl-c stops)", listener.local_addr()?);
    serve(state, listener).await?;
    Ok(())
}
