//! HTTP API over capture sessions and morphs.
//!
//! Sessions are created asynchronously: `POST /api/sessions` answers 202 and
//! the pair is recorded on a bounded worker pool, while clients poll
//! `GET /api/sessions/{id}`. Morph audio is cached under an id derived from
//! the session and the canonical morph settings, so repeating a request
//! returns the same id and byte-identical WAV data.

mod api;
mod error;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::sync::{RwLock, Semaphore};
use tower_http::cors::CorsLayer;

use morphfader::backend::DiffusionBackend;
use morphfader::capture::CaptureSession;

pub use api::{
    CreateSession, MorphCreated, MorphRequest, SessionCreated, SessionRecord, SessionState,
    SweepCreated, SweepRequest,
};
pub use error::ApiError;

/// Runtime settings for [`router`].
#[derive(Clone)]
pub struct ServiceConfig {
    pub backend: Arc<dyn DiffusionBackend>,
    /// Generation jobs allowed to run at once.
    pub workers: usize,
    /// If set, recorded sessions are also saved under `<dir>/<session_id>/`.
    pub spill_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(backend: Arc<dyn DiffusionBackend>) -> Self {
        Self {
            backend,
            workers: 1,
            spill_dir: None,
        }
    }
}

pub(crate) struct SessionEntry {
    pub record: SessionRecord,
    pub pair: Option<Arc<(CaptureSession, CaptureSession)>>,
}

pub(crate) struct AppState {
    pub backend: Arc<dyn DiffusionBackend>,
    pub spill_dir: Option<PathBuf>,
    pub jobs: Semaphore,
    pub sessions: RwLock<HashMap<String, SessionEntry>>,
    pub morphs: RwLock<HashMap<String, Arc<Vec<u8>>>>,
}

/// Builds the application router with permissive CORS.
pub fn router(config: ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        backend: config.backend,
        spill_dir: config.spill_dir,
        jobs: Semaphore::new(config.workers.max(1)),
        sessions: RwLock::new(HashMap::new()),
        morphs: RwLock::new(HashMap::new()),
    });
    Router::new()
        .route("/api/sessions", post(api::create_session))
        .route("/api/sessions/{id}", get(api::get_session))
        .route("/api/sessions/{id}/source/audio", get(api::source_audio))
        .route("/api/sessions/{id}/target/audio", get(api::target_audio))
        .route("/api/sessions/{id}/morphs", post(api::create_morph))
        .route("/api/sessions/{id}/sweep", post(api::create_sweep))
        .route("/api/morphs/{id}/audio", get(api::morph_audio))
        .layer(CorsLayer::permissive())
        .with_state(state)
}
