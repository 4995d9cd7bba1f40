//! HTTP interface under `/v1`.
//!
//! | method | path               | body in                 | body out                        |
//! |--------|--------------------|-------------------------|---------------------------------|
//! | POST   | `/v1/analyze`      | WAV bytes               | session, track, mel preview     |
//! | POST   | `/v1/synthesize`   | [`SynthesizeRequest`]   | audio id, desired/realized track|
//! | GET    | `/v1/features`     |                         | feature metadata and ranges     |
//! | GET    | `/v1/health`       |                         | fingerprints and versions       |
//! | GET    | `/v1/audio/{id}`   |                         | WAV attachment                  |
//! | GET    | `/v1/sessions/{id}`|                         | session state                   |
//!
//! Errors are `application/problem+json` with a `stage` member.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::timeout::TimeoutLayer;
use wavebender::audio::Waveform;
use wavebender::manipulation::{ManipulationSpec, Pipeline};
use wavebender::track::{Feature, ParameterTrack, TrackMeta, N_FEATURES};
use wavebender::vocoder::VocoderBundle;
use wavebender::Error;

use crate::config::ServiceConfig;

pub const MEL_PREVIEW_FRAMES: usize = 400;
pub const MEL_PREVIEW_BINS: usize = 80;
const STATELESS_AUDIO_CAP: usize = 64;

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub stage: String,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, stage: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    fn bad_request(stage: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, stage, detail)
    }

    /// Maps a library error, using its own stage label when it has one.
    fn from_core(err: Error, stage: &str) -> Self {
        let stage = err.stage().unwrap_or(stage);
        let status = match err.root() {
            Error::FingerprintMismatch { .. } => StatusCode::CONFLICT,
            Error::InvalidWaveform(_)
            | Error::TooShort { .. }
            | Error::InvalidInput(_)
            | Error::ShapeMismatch(_)
            | Error::NormalizationState(_)
            | Error::Manipulation(_)
            | Error::Wav(_)
            | Error::Json(_)
            | Error::Csv(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, stage, err.root().to_string())
    }
}

#[derive(Serialize)]
struct Problem<'a> {
    #[serde(rename = "type")]
    kind: &'a str,
    title: &'a str,
    status: u16,
    detail: &'a str,
    stage: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&Problem {
            kind: "about:blank",
            title: self.status.canonical_reason().unwrap_or("error"),
            status: self.status.as_u16(),
            detail: &self.detail,
            stage: &self.stage,
        })
        .expect("problem serializes");
        (self.status, [(header::CONTENT_TYPE, "application/problem+json")], body).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Denormalized track in JSON form. `frames` rows follow `columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackJson {
    pub frame_rate: f64,
    pub sample_rate: u32,
    pub columns: Vec<String>,
    pub frames: Vec<[f64; N_FEATURES]>,
    pub voicing: Vec<bool>,
    #[serde(default)]
    pub f0_fallback: bool,
}

impl TrackJson {
    pub fn from_track(track: &ParameterTrack) -> Self {
        Self {
            frame_rate: track.frame_rate(),
            sample_rate: track.meta().sample_rate,
            columns: Feature::ALL.iter().map(|f| f.column().to_string()).collect(),
            frames: track
                .values()
                .rows()
                .into_iter()
                .map(|r| std::array::from_fn(|c| r[c]))
                .collect(),
            voicing: track.voicing().to_vec(),
            f0_fallback: track.meta().f0_fallback,
        }
    }

    pub fn to_track(&self) -> wavebender::Result<ParameterTrack> {
        let expected: Vec<&str> = Feature::ALL.iter().map(|f| f.column()).collect();
        if self.columns != expected {
            return Err(Error::InvalidInput(format!("track columns must be {expected:?}")));
        }
        let mut values = Array2::zeros((self.frames.len(), N_FEATURES));
        for (t, row) in self.frames.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                values[[t, c]] = *v;
            }
        }
        let meta = TrackMeta {
            sample_rate: self.sample_rate,
            stats_id: None,
            f0_fallback: self.f0_fallback,
        };
        ParameterTrack::new(values, self.voicing.clone(), self.frame_rate, false, meta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelPreview {
    pub n_frames: usize,
    pub n_bins: usize,
    /// Source frames averaged into each preview column.
    pub frame_stride: usize,
    pub values: Vec<Vec<f32>>,
}

/// Mean-pooled log mel, at most 400 columns by 80 bins.
pub fn mel_preview(bins: &Array2<f64>) -> MelPreview {
    let (t, m) = bins.dim();
    let stride = t.div_ceil(MEL_PREVIEW_FRAMES).max(1);
    let band = m.div_ceil(MEL_PREVIEW_BINS).max(1);
    let values = (0..t.div_ceil(stride))
        .map(|i| {
            let rows = i * stride..((i + 1) * stride).min(t);
            (0..m.div_ceil(band))
                .map(|j| {
                    let cols = j * band..((j + 1) * band).min(m);
                    let n = rows.len() * cols.len();
                    let s: f64 = rows.clone().flat_map(|r| cols.clone().map(move |c| (r, c))).map(|ix| bins[ix]).sum();
                    (s / n as f64) as f32
                })
                .collect()
        })
        .collect::<Vec<Vec<f32>>>();
    MelPreview {
        n_frames: values.len(),
        n_bins: values.first().map_or(0, Vec::len),
        frame_stride: stride,
        values,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub model: String,
    pub stats: String,
    pub mel: String,
    pub vocoder: String,
    pub coupling: Vec<String>,
}

/// Client expectations; any field that is set must match the service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpectedFingerprints {
    pub model: Option<String>,
    pub stats: Option<String>,
    pub mel: Option<String>,
    pub vocoder: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocoderInfo {
    pub name: String,
    pub kind: String,
    pub version: String,
    pub fingerprint: String,
}

impl VocoderInfo {
    pub fn from_bundle(bundle: &VocoderBundle) -> Self {
        let m = bundle.manifest();
        Self {
            name: m.name.clone(),
            kind: serde_json::to_value(m.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
            version: m.version.clone(),
            fingerprint: m.weights_sha256.chars().take(16).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionRecord {
    id: String,
    version: u64,
    upload_id: String,
    track: TrackJson,
    spec: ManipulationSpec,
    last_audio_id: Option<String>,
    renders: VecDeque<String>,
    fingerprints: Fingerprints,
}

struct Session {
    record: SessionRecord,
    touched: Instant,
}

#[derive(Default)]
struct Store {
    sessions: HashMap<String, Session>,
    audio: HashMap<String, Arc<Vec<u8>>>,
    /// Audio rendered outside any session, oldest first.
    loose: VecDeque<String>,
}

impl Store {
    fn drop_session(&mut self, id: &str) -> Option<Session> {
        let s = self.sessions.remove(id)?;
        for a in s.record.renders.iter().chain(std::iter::once(&s.record.upload_id)) {
            self.audio.remove(a);
        }
        Some(s)
    }
}

/// Shared, read-only model state plus the mutable session store.
pub struct AppState {
    pipeline: Arc<Pipeline>,
    config: ServiceConfig,
    fingerprints: Fingerprints,
    vocoder: VocoderInfo,
    store: Mutex<Store>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, vocoder: VocoderInfo, config: ServiceConfig) -> wavebender::Result<Self> {
        let model = pipeline.model();
        let fingerprints = Fingerprints {
            model: model.fingerprint(),
            stats: model.stats.id(),
            mel: model.mel_config.fingerprint(),
            vocoder: vocoder.fingerprint.clone(),
            coupling: pipeline.predictors().map(|p| p.fingerprint().to_string()).collect(),
        };
        let state = Self {
            pipeline,
            config,
            fingerprints,
            vocoder,
            store: Mutex::new(Store::default()),
        };
        state.restore()?;
        Ok(state)
    }

    pub fn fingerprints(&self) -> &Fingerprints {
        &self.fingerprints
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.store.lock().expect("store lock").sessions.len()
    }

    fn session_file(&self, id: &str) -> Option<PathBuf> {
        self.config.session_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn audio_file(dir: &Path, id: &str) -> PathBuf {
        dir.join("audio").join(format!("{id}.wav"))
    }

    /// Reloads persisted sessions whose fingerprints still match.
    fn restore(&self) -> wavebender::Result<()> {
        let Some(dir) = &self.config.session_dir else { return Ok(()) };
        std::fs::create_dir_all(dir.join("audio"))?;
        let mut store = self.store.lock().expect("store lock");
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Ok(record) = serde_json::from_slice::<SessionRecord>(&std::fs::read(&path)?) else {
                log::warn!("skipping unreadable session file {}", path.display());
                continue;
            };
            if record.fingerprints != self.fingerprints {
                log::info!("dropping session {} from another checkpoint", record.id);
                continue;
            }
            for a in record.renders.iter().chain(std::iter::once(&record.upload_id)) {
                if let Ok(bytes) = std::fs::read(Self::audio_file(dir, a)) {
                    store.audio.insert(a.clone(), Arc::new(bytes));
                }
            }
            store.sessions.insert(
                record.id.clone(),
                Session {
                    record,
                    touched: Instant::now(),
                },
            );
        }
        Ok(())
    }

    fn persist(&self, record: &SessionRecord, store: &Store) {
        let (Some(dir), Some(file)) = (&self.config.session_dir, self.session_file(&record.id)) else { return };
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir.join("audio"))?;
            for a in record.renders.iter().chain(std::iter::once(&record.upload_id)) {
                let p = Self::audio_file(dir, a);
                if let (false, Some(bytes)) = (p.exists(), store.audio.get(a)) {
                    std::fs::write(p, bytes.as_slice())?;
                }
            }
            std::fs::write(file, serde_json::to_vec(record)?)
        };
        if let Err(e) = write() {
            log::warn!("could not persist session {}: {e}", record.id);
        }
    }

    fn forget(&self, id: &str) {
        if let Some(file) = self.session_file(id) {
            let _ = std::fs::remove_file(file);
        }
    }

    fn expire(&self, store: &mut Store) {
        let ttl = Duration::from_secs(self.config.session_ttl);
        let stale: Vec<String> = store
            .sessions
            .iter()
            .filter(|(_, s)| s.touched.elapsed() > ttl)
            .map(|(k, _)| k.clone())
            .collect();
        for id in stale {
            store.drop_session(&id);
            self.forget(&id);
        }
    }

    fn check_expected(&self, expected: &ExpectedFingerprints) -> ApiResult<()> {
        let fp = &self.fingerprints;
        let pairs = [
            ("model", &expected.model, &fp.model),
            ("stats", &expected.stats, &fp.stats),
            ("mel", &expected.mel, &fp.mel),
            ("vocoder", &expected.vocoder, &fp.vocoder),
        ];
        for (name, want, have) in pairs {
            if let Some(want) = want {
                if want != have {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "fingerprint",
                        format!("{name} fingerprint mismatch: request expects {want}, service has {have}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Content-derived id, so identical audio gets the same id.
fn audio_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..12])
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "worker", e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
pub struct AnalyzeQuery {
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub session_id: String,
    pub version: u64,
    pub upload_id: String,
    pub duration_secs: f64,
    pub track: TrackJson,
    pub mel_preview: MelPreview,
    pub fingerprints: Fingerprints,
}

async fn analyze(
    State(state): State<Arc<AppState>>,
    Query(q): Query<AnalyzeQuery>,
    body: Bytes,
) -> ApiResult<Json<AnalyzeResponse>> {
    let wave = Waveform::from_wav_bytes(&body).map_err(|e| ApiError::from_core(e, "decode"))?;
    if wave.duration_secs() > state.config.upload_limit {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "decode",
            format!("{:.1} s of audio exceeds the {:.1} s upload limit", wave.duration_secs(), state.config.upload_limit),
        ));
    }
    let st = state.clone();
    let (track, preview) = blocking(move || {
        let track = st.pipeline.analyse(&wave).map_err(|e| ApiError::from_core(e, "analyse"))?;
        let mel = wavebender::mel::compute(&wave, &st.pipeline.model().mel_config).map_err(|e| ApiError::from_core(e, "mel"))?;
        Ok((track, mel_preview(&mel.bins)))
    })
    .await?;

    let upload_id = audio_id(&body);
    let track_json = TrackJson::from_track(&track);
    let mut store = state.store.lock().expect("store lock");
    state.expire(&mut store);
    store.audio.insert(upload_id.clone(), Arc::new(body.to_vec()));
    let id = match q.session_id {
        Some(id) if store.sessions.contains_key(&id) => id,
        Some(id) => return Err(ApiError::new(StatusCode::NOT_FOUND, "session", format!("no session {id}"))),
        None => uuid::Uuid::new_v4().simple().to_string(),
    };
    let version = store.sessions.get(&id).map_or(0, |s| s.record.version) + 1;
    let renders = store.sessions.get(&id).map(|s| s.record.renders.clone()).unwrap_or_default();
    let record = SessionRecord {
        id: id.clone(),
        version,
        upload_id: upload_id.clone(),
        track: track_json.clone(),
        spec: ManipulationSpec::keep(),
        last_audio_id: None,
        renders,
        fingerprints: state.fingerprints.clone(),
    };
    state.persist(&record, &store);
    store.sessions.insert(
        id.clone(),
        Session {
            record,
            touched: Instant::now(),
        },
    );
    Ok(Json(AnalyzeResponse {
        session_id: id,
        version,
        upload_id,
        duration_secs: track.n_frames() as f64 / track.frame_rate(),
        track: track_json,
        mel_preview: preview,
        fingerprints: state.fingerprints.clone(),
    }))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeRequest {
    pub session_id: Option<String>,
    /// Overrides the session's track when both are present.
    pub track: Option<TrackJson>,
    pub spec: Option<ManipulationSpec>,
    pub seed: u64,
    pub fingerprints: ExpectedFingerprints,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesizeResponse {
    pub session_id: Option<String>,
    pub version: Option<u64>,
    pub audio_id: String,
    pub audio_url: String,
    pub sample_rate: u32,
    pub n_samples: usize,
    pub seed: u64,
    pub spec: ManipulationSpec,
    pub desired: TrackJson,
    pub realized: TrackJson,
    pub fingerprints: Fingerprints,
}

async fn synthesize(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<SynthesizeResponse>> {
    let req: SynthesizeRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("request", format!("malformed body: {e}")))?;
    state.check_expected(&req.fingerprints)?;
    let spec = req.spec.clone().unwrap_or_else(ManipulationSpec::keep);
    spec.validate().map_err(|e| ApiError::from_core(e, "spec"))?;

    let track = match (&req.track, &req.session_id) {
        (Some(t), _) => t.clone(),
        (None, Some(id)) => {
            let mut store = state.store.lock().expect("store lock");
            state.expire(&mut store);
            let s = store
                .sessions
                .get_mut(id)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session", format!("no session {id}")))?;
            s.touched = Instant::now();
            s.record.track.clone()
        }
        (None, None) => return Err(ApiError::bad_request("request", "either track or session_id is required")),
    };
    let track = track.to_track().map_err(|e| ApiError::from_core(e, "track"))?;

    let st = state.clone();
    let seed = req.seed;
    let spec_for_render = spec.clone();
    let (desired, realized, wav) = blocking(move || {
        let out = st
            .pipeline
            .manipulate(&track, &spec_for_render, seed)
            .map_err(|e| ApiError::from_core(e, "synthesize"))?;
        let realized = st.pipeline.analyse(&out.rendered.wave).map_err(|e| ApiError::from_core(e, "reanalyse"))?;
        let wav = out.rendered.wave.to_wav_bytes().map_err(|e| ApiError::from_core(e, "encode"))?;
        Ok((out.desired, realized, wav))
    })
    .await?;

    let id = audio_id(&wav);
    let n_samples = realized_len(&wav);
    let mut store = state.store.lock().expect("store lock");
    store.audio.insert(id.clone(), Arc::new(wav));
    let version = match &req.session_id {
        Some(sid) => {
            let cap = state.config.max_renders_per_session.max(1);
            let Some(s) = store.sessions.get_mut(sid) else {
                return Err(ApiError::new(StatusCode::NOT_FOUND, "session", format!("session {sid} expired")));
            };
            let r = &mut s.record;
            r.version += 1;
            r.spec = spec.clone();
            r.last_audio_id = Some(id.clone());
            r.renders.retain(|a| a != &id);
            r.renders.push_back(id.clone());
            let evicted: Vec<String> = (cap..r.renders.len()).filter_map(|_| r.renders.pop_front()).collect();
            s.touched = Instant::now();
            let record = r.clone();
            for a in evicted {
                store.audio.remove(&a);
                if let Some(dir) = &state.config.session_dir {
                    let _ = std::fs::remove_file(AppState::audio_file(dir, &a));
                }
            }
            state.persist(&record, &store);
            Some(record.version)
        }
        None => {
            store.loose.retain(|a| a != &id);
            store.loose.push_back(id.clone());
            while store.loose.len() > STATELESS_AUDIO_CAP {
                if let Some(old) = store.loose.pop_front() {
                    store.audio.remove(&old);
                }
            }
            None
        }
    };
    drop(store);
    Ok(Json(SynthesizeResponse {
        session_id: req.session_id,
        version,
        audio_url: format!("/v1/audio/{id}"),
        audio_id: id,
        sample_rate: state.pipeline.vocoder().mel_config().sample_rate,
        n_samples,
        seed,
        spec,
        desired: TrackJson::from_track(&desired),
        realized: TrackJson::from_track(&realized),
        fingerprints: state.fingerprints.clone(),
    }))
}

fn realized_len(wav: &[u8]) -> usize {
    hound::WavReader::new(std::io::Cursor::new(wav)).map_or(0, |r| r.duration() as usize)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub name: String,
    pub column: String,
    pub unit: String,
    pub index: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean ± 3 std of the training statistics.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeaturesResponse {
    pub stats_id: String,
    pub frame_rate: f64,
    pub features: Vec<FeatureInfo>,
}

async fn features(State(state): State<Arc<AppState>>) -> Json<FeaturesResponse> {
    let model = state.pipeline.model();
    let features = Feature::ALL
        .into_iter()
        .map(|f| {
            let (min, max) = model.stats.range(f, 3.0);
            FeatureInfo {
                name: f.name().into(),
                column: f.column().into(),
                unit: f.unit().into(),
                index: f.index(),
                mean: model.stats.mean[f.index()],
                std: model.stats.std[f.index()],
                min,
                max,
            }
        })
        .collect();
    Json(FeaturesResponse {
        stats_id: model.stats.id(),
        frame_rate: model.mel_config.frame_rate(),
        features,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingInfo {
    pub dependent: Feature,
    pub fingerprint: String,
    pub validation_rmse_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub fingerprints: Fingerprints,
    pub vocoder: VocoderInfo,
    pub coupling: Vec<CouplingInfo>,
    pub sessions: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let coupling = state
        .pipeline
        .predictors()
        .map(|p| CouplingInfo {
            dependent: p.dependent(),
            fingerprint: p.fingerprint().into(),
            validation_rmse_hz: p.meta().validation_rmse_hz,
        })
        .collect();
    Json(HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        fingerprints: state.fingerprints.clone(),
        vocoder: state.vocoder.clone(),
        coupling,
        sessions: state.session_count(),
    })
}

async fn audio(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let bytes = state
        .store
        .lock()
        .expect("store lock")
        .audio
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "audio", format!("no audio {id} (expired or evicted)")))?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    let disposition = format!("attachment; filename=\"{id}.wav\"");
    headers.insert(header::CONTENT_DISPOSITION, HeaderValue::from_str(&disposition).expect("ascii id"));
    Ok((headers, bytes.as_ref().clone()).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionResponse {
    pub session_id: String,
    pub version: u64,
    pub upload_id: String,
    pub track: TrackJson,
    pub spec: ManipulationSpec,
    pub last_audio_id: Option<String>,
    pub renders: Vec<String>,
    pub fingerprints: Fingerprints,
}

async fn session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionResponse>> {
    let mut store = state.store.lock().expect("store lock");
    state.expire(&mut store);
    let s = store
        .sessions
        .get_mut(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session", format!("no session {id}")))?;
    s.touched = Instant::now();
    let r = &s.record;
    Ok(Json(SessionResponse {
        session_id: r.id.clone(),
        version: r.version,
        upload_id: r.upload_id.clone(),
        track: r.track.clone(),
        spec: r.spec.clone(),
        last_audio_id: r.last_audio_id.clone(),
        renders: r.renders.iter().cloned().collect(),
        fingerprints: r.fingerprints.clone(),
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "route", "no such endpoint")
}

/// Request body ceiling: the configured audio limit as 32-bit stereo at
/// 48 kHz, plus header slack. Shorter-but-denser files are caught after
/// decoding.
fn body_limit(config: &ServiceConfig) -> usize {
    (config.upload_limit.max(0.0) * 48_000.0 * 2.0 * 4.0) as usize + 64 * 1024
}

pub fn router(state: Arc<AppState>) -> Router {
    let origins: Vec<HeaderValue> = state
        .config
        .cors_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let timeout = Duration::from_secs(state.config.request_timeout.max(1));
    Router::new()
        .route("/v1/analyze", post(analyze))
        .route("/v1/synthesize", post(synthesize))
        .route("/v1/features", get(features))
        .route("/v1/health", get(health))
        .route("/v1/audio/{id}", get(audio))
        .route("/v1/sessions/{id}", get(session))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(body_limit(&state.config)))
        .layer(TimeoutLayer::with_status_code(StatusCode::REQUEST_TIMEOUT, timeout))
        .layer(cors)
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_is_bounded_and_pools_means() {
        let bins = Array2::from_shape_fn((1001, 80), |(t, m)| (t + m) as f64);
        let p = mel_preview(&bins);
        assert!(p.n_frames <= MEL_PREVIEW_FRAMES && p.n_bins == 80);
        assert_eq!(p.frame_stride, 3);
        // first column averages frames 0..3 of bin 0
        assert!((p.values[0][0] - 1.0).abs() < 1e-6);
        let small = mel_preview(&Array2::zeros((5, 128)));
        assert_eq!((small.n_frames, small.n_bins), (5, 64));
    }

    #[test]
    fn track_json_round_trip() {
        let values = Array2::from_shape_fn((4, 5), |(t, c)| t as f64 * 10.0 + c as f64);
        let track = ParameterTrack::new(values, vec![true, false, true, true], 86.1, false, TrackMeta::default()).unwrap();
        let json = TrackJson::from_track(&track);
        assert_eq!(json.to_track().unwrap(), track);
        let mut bad = json.clone();
        bad.columns.swap(0, 1);
        assert!(bad.to_track().is_err());
    }

    #[test]
    fn problem_body_carries_stage() {
        let err = ApiError::from_core(Error::Manipulation("scale must be positive".into()).at("spec"), "other");
        assert_eq!(err.status, StatusCode::BAD_REQUEST);
        assert_eq!(err.stage, "spec");
        let conflict = ApiError::from_core(
            Error::FingerprintMismatch {
                expected: "a".into(),
                found: "b".into(),
            },
            "x",
        );
        assert_eq!(conflict.status, StatusCode::CONFLICT);
    }
}
