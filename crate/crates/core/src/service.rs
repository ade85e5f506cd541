//! JSON-over-HTTP facade for ingest, text and voice queries, and stats.
//!
//! One corpus per process. Queries read an immutable snapshot; ingest builds
//! the extended corpus under a lock, persists it, then swaps the snapshot.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ProviderConfig, Providers};
use crate::corpus::{Corpus, CorpusPaths};
use crate::error::{Error, Result};
use crate::index::{IndexStats, RetrievalMode};
use crate::ingest::{SourceFormat, DEFAULT_CHUNK_BUDGET};
use crate::keywords::{ExtractorConfig, KeywordExtractor};
use crate::pipeline::{AnswerRecord, Pipeline, PipelineConfig};
use crate::speech::{voice_query, AudioBlob, AudioEncoding, SpeechTiming, VoiceError};

const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

/// Contents of `kar.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub corpus_dir: PathBuf,
    /// Override the default artifact locations inside `corpus_dir`.
    pub chunks_path: Option<PathBuf>,
    pub index_path: Option<PathBuf>,
    pub store_path: Option<PathBuf>,
    /// Origins allowed to call the API from a browser. Empty disables CORS.
    pub cors_origins: Vec<String>,
    pub chunk_budget: usize,
    pub providers: ProviderConfig,
    pub keywords: ExtractorConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            corpus_dir: PathBuf::from("corpus"),
            chunks_path: None,
            index_path: None,
            store_path: None,
            cors_origins: Vec::new(),
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            providers: ProviderConfig::default(),
            keywords: ExtractorConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Parses TOML; relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut config: ServiceConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for p in [
            Some(&mut config.corpus_dir),
            config.chunks_path.as_mut(),
            config.index_path.as_mut(),
            config.store_path.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.listen.port() == 0 {
            return Err(Error::Config("listen port must be between 1 and 65535".into()));
        }
        for origin in &self.cors_origins {
            HeaderValue::from_str(origin).map_err(|_| Error::Config(format!("bad CORS origin {origin:?}")))?;
        }
        self.providers.timeout()?;
        Ok(())
    }

    pub fn paths(&self) -> CorpusPaths {
        let defaults = CorpusPaths::in_dir(&self.corpus_dir);
        CorpusPaths {
            chunks: self.chunks_path.clone().unwrap_or(defaults.chunks),
            index: self.index_path.clone().unwrap_or(defaults.index),
            store: self.store_path.clone().unwrap_or(defaults.store),
        }
    }
}

struct Snapshot {
    pipeline: Pipeline,
}

impl Snapshot {
    fn new(corpus: Corpus, extractor: &KeywordExtractor, providers: &Providers, config: &PipelineConfig) -> Self {
        let pipeline = Pipeline::new(
            Arc::new(corpus.chunks),
            extractor.clone(),
            providers.embedder.clone(),
            providers.llm.clone(),
        )
        .with_index(Arc::new(corpus.index))
        .with_store(Arc::new(corpus.store))
        .with_config(config.clone());
        Self { pipeline }
    }
}

/// Shared state behind the router.
pub struct AppState {
    config: ServiceConfig,
    providers: Providers,
    extractor: KeywordExtractor,
    paths: CorpusPaths,
    snapshot: RwLock<Arc<Snapshot>>,
    ingest_lock: tokio::sync::Mutex<()>,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState").field("paths", &self.paths).finish_non_exhaustive()
    }
}

impl AppState {
    /// Builds providers from the config and loads any existing corpus.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let providers = config.providers.build()?;
        Self::with_providers(config, providers)
    }

    /// Like [`AppState::open`] with caller-supplied providers.
    pub fn with_providers(config: ServiceConfig, providers: Providers) -> Result<Self> {
        let extractor = providers.extractor(config.keywords.clone());
        let paths = config.paths();
        let corpus = Corpus::open(&paths, &extractor, providers.embedder.as_ref(), config.chunk_budget)?;
        let snapshot = Snapshot::new(corpus, &extractor, &providers, &config.pipeline);
        Ok(Self {
            snapshot: RwLock::new(Arc::new(snapshot)),
            config,
            providers,
            extractor,
            paths,
            ingest_lock: tokio::sync::Mutex::new(()),
        })
    }

    fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn install(&self, corpus: Corpus) {
        let snapshot = Snapshot::new(corpus, &self.extractor, &self.providers, &self.config.pipeline);
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    }

    /// The pipeline queries currently run against.
    pub fn pipeline(&self) -> Pipeline {
        self.snapshot().pipeline.clone()
    }

    pub fn stats(&self) -> ServiceStats {
        let snap = self.snapshot();
        let p = &snap.pipeline;
        let store = p.store().expect("service pipelines always have a store");
        ServiceStats {
            index: p.index().expect("service pipelines always have an index").stats(),
            documents: p
                .chunks()
                .iter()
                .map(|c| c.doc_id.as_str())
                .collect::<std::collections::BTreeSet<_>>()
                .len(),
            store_vectors: store.len(),
            store_dimension: if store.is_empty() { 0 } else { store.dimension() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceStats {
    #[serde(flatten)]
    pub index: IndexStats,
    pub documents: usize,
    pub store_vectors: usize,
    pub store_dimension: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueryRequest {
    pub query: String,
    #[serde(default = "default_mode")]
    pub mode: RetrievalMode,
    pub top_k: Option<usize>,
}

fn default_mode() -> RetrievalMode {
    RetrievalMode::Kar
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestResponse {
    pub doc_id: String,
    pub chunk_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoiceResponse {
    #[serde(flatten)]
    pub record: AnswerRecord,
    pub speech: SpeechTiming,
    /// Base64 of the synthesized answer.
    pub answer_audio: String,
    pub answer_audio_encoding: AudioEncoding,
    #[serde(with = "crate::duration_secs")]
    pub total: Duration,
}

/// An error response: status plus `{"error", "stage"?}` and any extra fields.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::Chunk { source, .. } => status_for(source),
        Error::Provider { .. } => StatusCode::SERVICE_UNAVAILABLE,
        Error::UnsupportedAudio(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        Error::NoSpeech => StatusCode::UNPROCESSABLE_ENTITY,
        Error::DuplicateDocument(_) => StatusCode::CONFLICT,
        Error::EmptyStore | Error::NoIndex | Error::NoStore => StatusCode::CONFLICT,
        Error::Io { .. } => StatusCode::INSUFFICIENT_STORAGE,
        Error::Decode(_)
        | Error::EmptyDocument
        | Error::UnsplittableToken { .. }
        | Error::EmptyQuery
        | Error::InvalidArgument(_)
        | Error::Precondition(_)
        | Error::Template(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = status_for(&e);
        let mut body = json!({ "error": e.to_string() });
        if let Some(stage) = e.stage_tag() {
            body["stage"] = json!(stage);
        }
        if status.is_server_error() {
            tracing::warn!(error = %e, "request failed");
        }
        Self { status, body }
    }
}

impl From<VoiceError> for ApiError {
    fn from(e: VoiceError) -> Self {
        let mut api = ApiError::from(e.error);
        if let Some(t) = e.transcript {
            api.body["query"] = json!(t);
        }
        if let Some(r) = e.record {
            api.body["answer"] = json!(r.answer);
            api.body["record"] = json!(r);
        }
        api.body["speech"] = json!(e.speech);
        api
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> std::result::Result<T, ApiError> + Send + 'static,
) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<ServiceStats> {
    Json(state.stats())
}

async fn query(State(state): State<Arc<AppState>>, Json(req): Json<QueryRequest>) -> ApiResult<AnswerRecord> {
    let mut pipeline = state.snapshot().pipeline.clone();
    if let Some(k) = req.top_k {
        if k == 0 {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "top_k must be at least 1"));
        }
        let mut config = pipeline.config().clone();
        config.top_k = k;
        pipeline = pipeline.with_config(config);
    }
    let record = blocking(move || pipeline.answer(&req.query, req.mode).map_err(ApiError::from)).await?;
    tracing::info!(mode = %record.mode, chunks = record.context_chunk_ids.len(), "answered query");
    Ok(Json(record))
}

struct Upload {
    file: Option<(Option<String>, Vec<u8>)>,
    fields: std::collections::HashMap<String, String>,
}

async fn read_multipart(mut multipart: Multipart, file_fields: &[&str]) -> std::result::Result<Upload, ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::new(StatusCode::BAD_REQUEST, e.body_text());
    let mut upload = Upload {
        file: None,
        fields: Default::default(),
    };
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        if file_fields.contains(&name.as_str()) {
            let filename = field.file_name().map(str::to_string);
            upload.file = Some((filename, field.bytes().await.map_err(bad)?.to_vec()));
        } else {
            upload.fields.insert(name, field.text().await.map_err(bad)?);
        }
    }
    Ok(upload)
}

async fn ingest(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<IngestResponse> {
    let upload = read_multipart(multipart, &["file", "document"]).await?;
    let (filename, bytes) = upload
        .file
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing multipart field \"file\""))?;
    let stem = filename
        .as_deref()
        .and_then(|f| Path::new(f).file_stem())
        .and_then(|s| s.to_str())
        .map(str::to_string);
    let doc_id = upload
        .fields
        .get("doc_id")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .or(stem)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing doc_id"))?;
    let format = match upload.fields.get("format") {
        Some(f) => f.parse().map_err(ApiError::from)?,
        None if filename.as_deref().is_some_and(|f| f.ends_with(".txt")) => SourceFormat::Plaintext,
        None => SourceFormat::Markdown,
    };

    let _guard = state.ingest_lock.lock().await;
    let worker = state.clone();
    let added = blocking(move || {
        let snap = worker.snapshot();
        let p = &snap.pipeline;
        let current = Corpus {
            chunks: (**p.chunks()).clone(),
            index: (**p.index().expect("index")).clone(),
            store: (**p.store().expect("store")).clone(),
        };
        let (next, added) = current.ingest(
            &doc_id,
            &bytes,
            format,
            worker.config.chunk_budget,
            &worker.extractor,
            worker.providers.embedder.as_ref(),
        )?;
        next.save(&worker.paths)?;
        worker.install(next);
        Ok(added)
    })
    .await?;
    tracing::info!(doc_id = %added.doc_id, chunks = added.chunk_count, "ingested document");
    Ok(Json(IngestResponse {
        doc_id: added.doc_id,
        chunk_count: added.chunk_count,
    }))
}

async fn voice(State(state): State<Arc<AppState>>, multipart: Multipart) -> ApiResult<VoiceResponse> {
    let upload = read_multipart(multipart, &["audio", "file"]).await?;
    let (_, bytes) = upload
        .file
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing multipart field \"audio\""))?;
    let mode = match upload.fields.get("mode") {
        Some(m) => m.parse().map_err(ApiError::from)?,
        None => RetrievalMode::Kar,
    };
    let audio = AudioBlob::from_wav(bytes)?;
    let pipeline = state.snapshot().pipeline.clone();
    let providers = state.providers.clone();
    let answer = blocking(move || {
        voice_query(&audio, mode, &pipeline, providers.stt.as_ref(), providers.tts.as_ref()).map_err(ApiError::from)
    })
    .await?;
    Ok(Json(VoiceResponse {
        record: answer.record,
        speech: answer.speech,
        answer_audio_encoding: answer.audio.encoding(),
        answer_audio: base64::engine::general_purpose::STANDARD.encode(answer.audio.bytes()),
        total: answer.total,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut router = Router::new()
        .route("/api/health", get(health))
        .route("/api/stats", get(stats))
        .route("/api/query", post(query))
        .route("/api/ingest", post(ingest))
        .route("/api/voice-query", post(voice))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES));
    if !state.config.cors_origins.is_empty() {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        router = router.layer(
            tower_http::cors::CorsLayer::new()
                .allow_origin(origins)
                .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    router.with_state(state)
}

/// Binds the configured address and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<()> {
    let listen = config.listen;
    let state = Arc::new(tokio::task::block_in_place(|| AppState::open(config))?);
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {listen}: {e}")))?;
    tracing::info!(%listen, "serving");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Config(format!("server stopped: {e}")))
}
