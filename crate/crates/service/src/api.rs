use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use morphfader::backend::MAX_PROMPT_CHARS;
use morphfader::capture::{record_pair, save_session, CaptureSession};
use morphfader::evaluation::{alpha_grid, sweep_recorded, MorphMethod, DEFAULT_ALPHA_STEP};
use morphfader::morph::{run_morph, ComponentMask, MorphConfig};
use morphfader::{AudioClip, Tensor};

use crate::error::ApiError;
use crate::{AppState, SessionEntry};

const DEFAULT_STEPS: usize = 20;
const MAX_STEPS: usize = 1000;

type Shared = State<Arc<AppState>>;
type Body = Result<Json<Value>, JsonRejection>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Pending,
    Ready,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub source_prompt: String,
    pub target_prompt: String,
    pub seed: u64,
    pub steps: usize,
    pub state: SessionState,
    /// Tokens of each prompt after padding to a common count; weight
    /// vectors are indexed by these.
    pub source_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub source_prompt: String,
    pub target_prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MorphRequest {
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MorphCreated {
    pub morph_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCreated {
    pub morph_ids: Vec<String>,
}

fn object(body: Body) -> Result<Map<String, Value>, ApiError> {
    match body {
        Ok(Json(Value::Object(map))) => Ok(map),
        Ok(Json(_)) => Err(ApiError::bad_body("request body must be a JSON object")),
        Err(rejection) => Err(ApiError::bad_body(rejection.body_text())),
    }
}

fn opt<'a>(map: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.get(key).filter(|v| !v.is_null())
}

fn string_field(map: &Map<String, Value>, key: &'static str) -> Result<String, ApiError> {
    match opt(map, key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ApiError::bad_field(
            key,
            format!("`{key}` must be a string"),
        )),
        None => Err(ApiError::bad_field(key, format!("`{key}` is required"))),
    }
}

fn number_field(map: &Map<String, Value>, key: &'static str) -> Result<Option<f64>, ApiError> {
    match opt(map, key) {
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| ApiError::bad_field(key, format!("`{key}` must be a number"))),
        None => Ok(None),
    }
}

fn uint_field(map: &Map<String, Value>, key: &'static str) -> Result<Option<u64>, ApiError> {
    match opt(map, key) {
        Some(v) => v.as_u64().map(Some).ok_or_else(|| {
            ApiError::bad_field(key, format!("`{key}` must be a non-negative integer"))
        }),
        None => Ok(None),
    }
}

fn weights_field(
    map: &Map<String, Value>,
    key: &'static str,
    tokens: usize,
) -> Result<Option<Vec<f64>>, ApiError> {
    let Some(v) = opt(map, key) else {
        return Ok(None);
    };
    let msg = || format!("`{key}` must be an array of {tokens} numbers, one per token");
    let items = v
        .as_array()
        .ok_or_else(|| ApiError::bad_field(key, msg()))?;
    if items.len() != tokens {
        return Err(ApiError::bad_field(key, msg()));
    }
    items
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| ApiError::bad_field(key, msg())))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn wav_response(bytes: &[u8]) -> Response {
    (
        [(header::CONTENT_TYPE, "audio/wav")],
        Bytes::copy_from_slice(bytes),
    )
        .into_response()
}

/// Deterministic id for a rendered clip of `session_id` under `settings`.
fn morph_id(session_id: &str, settings: &Value) -> String {
    let mut h = Sha256::new();
    h.update(session_id.as_bytes());
    h.update([0]);
    h.update(settings.to_string().as_bytes());
    h.finalize()[..16]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn injection_settings(cfg: &MorphConfig) -> Value {
    let weights = |w: &Option<Tensor>| w.as_ref().map(|t| t.data().to_vec());
    json!({
        "method": MorphMethod::Ours,
        "alpha": cfg.alpha,
        "components": cfg.mask.to_string(),
        "source_weights": weights(&cfg.source_weights),
        "target_weights": weights(&cfg.target_weights),
    })
}

fn sweep_settings(method: MorphMethod, alpha: f64) -> Value {
    match method {
        MorphMethod::Ours => injection_settings(&MorphConfig::new(alpha, ComponentMask::QKV)),
        other => json!({ "method": other, "alpha": alpha }),
    }
}

async fn ready_pair(
    state: &AppState,
    id: &str,
) -> Result<Arc<(CaptureSession, CaptureSession)>, ApiError> {
    let sessions = state.sessions.read().await;
    let entry = sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found("session", id))?;
    match (&entry.pair, entry.record.state) {
        (Some(pair), SessionState::Ready) => Ok(pair.clone()),
        (_, SessionState::Failed) => Err(ApiError::not_ready(id, "failed")),
        _ => Err(ApiError::not_ready(id, "pending")),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> morphfader::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("render task failed: {e}")))?
        .map_err(ApiError::from)
}

pub(crate) async fn create_session(
    State(state): Shared,
    body: Body,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let map = object(body)?;
    let source = string_field(&map, "source_prompt")?;
    let target = string_field(&map, "target_prompt")?;
    let seed = uint_field(&map, "seed")?.unwrap_or(0);
    let steps = uint_field(&map, "steps")?.map_or(DEFAULT_STEPS, |s| s as usize);
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(ApiError::bad_field(
            "steps",
            format!("`steps` must lie in 1..={MAX_STEPS}"),
        ));
    }
    for (key, prompt) in [("source_prompt", &source), ("target_prompt", &target)] {
        if prompt.chars().count() > MAX_PROMPT_CHARS {
            return Err(ApiError::bad_field(
                key,
                format!("`{key}` exceeds {MAX_PROMPT_CHARS} characters"),
            ));
        }
        if let Err(e) = state.backend.encode_prompt(prompt, 0) {
            return Err(ApiError::bad_field(key, e.to_string()));
        }
    }

    let session_id = uuid::Uuid::new_v4().simple().to_string();
    let record = SessionRecord {
        session_id: session_id.clone(),
        source_prompt: source,
        target_prompt: target,
        seed,
        steps,
        state: SessionState::Pending,
        source_tokens: Vec::new(),
        target_tokens: Vec::new(),
        error: None,
    };
    state.sessions.write().await.insert(
        session_id.clone(),
        SessionEntry {
            record: record.clone(),
            pair: None,
        },
    );
    tokio::spawn(record_job(state, record));
    Ok((StatusCode::ACCEPTED, Json(SessionCreated { session_id })))
}

async fn record_job(state: Arc<AppState>, record: SessionRecord) {
    let outcome = match state.jobs.acquire().await {
        Ok(_permit) => {
            let backend = state.backend.clone();
            let spill = state.spill_dir.clone();
            let r = record.clone();
            blocking(move || {
                let (src, tgt) = record_pair(
                    backend.as_ref(),
                    &r.source_prompt,
                    &r.target_prompt,
                    r.seed,
                    r.steps,
                )?;
                if let Some(dir) = spill {
                    let dir = dir.join(&r.session_id);
                    save_session(&src, dir.join("source"))?;
                    save_session(&tgt, dir.join("target"))?;
                }
                Ok((src, tgt))
            })
            .await
        }
        Err(e) => Err(ApiError::internal(e.to_string())),
    };
    let mut sessions = state.sessions.write().await;
    let Some(entry) = sessions.get_mut(&record.session_id) else {
        return;
    };
    match outcome {
        Ok(pair) => {
            entry.record.source_tokens = pair.0.token_strings.clone();
            entry.record.target_tokens = pair.1.token_strings.clone();
            entry.record.state = SessionState::Ready;
            entry.pair = Some(Arc::new(pair));
        }
        Err(e) => {
            entry.record.state = SessionState::Failed;
            entry.record.error = Some(e.message);
        }
    }
}

pub(crate) async fn get_session(
    State(state): Shared,
    Path(id): Path<String>,
) -> Result<Json<SessionRecord>, ApiError> {
    let sessions = state.sessions.read().await;
    let entry = sessions
        .get(&id)
        .ok_or_else(|| ApiError::not_found("session", &id))?;
    Ok(Json(entry.record.clone()))
}

async fn endpoint_audio(state: &AppState, id: &str, target: bool) -> Result<Response, ApiError> {
    let pair = ready_pair(state, id).await?;
    let clip = if target { &pair.1.audio } else { &pair.0.audio };
    Ok(wav_response(&clip.to_wav_bytes().map_err(ApiError::from)?))
}

pub(crate) async fn source_audio(
    State(state): Shared,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    endpoint_audio(&state, &id, false).await
}

pub(crate) async fn target_audio(
    State(state): Shared,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    endpoint_audio(&state, &id, true).await
}

pub(crate) async fn create_morph(
    State(state): Shared,
    Path(id): Path<String>,
    body: Body,
) -> Result<Json<MorphCreated>, ApiError> {
    let pair = ready_pair(&state, &id).await?;
    let map = object(body)?;
    let alpha = number_field(&map, "alpha")?
        .ok_or_else(|| ApiError::bad_field("alpha", "`alpha` is required"))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ApiError::bad_field(
            "alpha",
            format!("`alpha` must lie in [0, 1], got {alpha}"),
        ));
    }
    let mask = match opt(&map, "components") {
        None => ComponentMask::QKV,
        Some(Value::String(s)) => s
            .parse()
            .map_err(|e: morphfader::Error| ApiError::bad_field("components", e.to_string()))?,
        Some(_) => {
            return Err(ApiError::bad_field(
                "components",
                "`components` must be a string",
            ))
        }
    };
    // normalizes -0.0 so it shares an id with 0.0
    let mut cfg = MorphConfig::new(alpha + 0.0, mask);
    let m = pair.0.token_count();
    if let Some(w) = weights_field(&map, "source_weights", m)? {
        cfg.source_weights = Some(
            Tensor::vector(w).map_err(|e| ApiError::bad_field("source_weights", e.to_string()))?,
        );
    }
    if let Some(w) = weights_field(&map, "target_weights", pair.1.token_count())? {
        cfg.target_weights = Some(
            Tensor::vector(w).map_err(|e| ApiError::bad_field("target_weights", e.to_string()))?,
        );
    }

    let morph_id = morph_id(&id, &injection_settings(&cfg));
    if !state.morphs.read().await.contains_key(&morph_id) {
        let backend = state.backend.clone();
        let wav =
            blocking(move || run_morph(&pair.0, &pair.1, &cfg, backend.as_ref())?.to_wav_bytes())
                .await?;
        state
            .morphs
            .write()
            .await
            .insert(morph_id.clone(), Arc::new(wav));
    }
    Ok(Json(MorphCreated { morph_id }))
}

pub(crate) async fn create_sweep(
    State(state): Shared,
    Path(id): Path<String>,
    body: Body,
) -> Result<Json<SweepCreated>, ApiError> {
    let pair = ready_pair(&state, &id).await?;
    let map = object(body)?;
    let step = number_field(&map, "alpha_step")?.unwrap_or(DEFAULT_ALPHA_STEP);
    let alphas = alpha_grid(step).map_err(|e| ApiError::bad_field("alpha_step", e.to_string()))?;
    let method = match opt(&map, "method") {
        None => MorphMethod::Ours,
        Some(Value::String(s)) => s
            .parse()
            .map_err(|e: morphfader::Error| ApiError::bad_field("method", e.to_string()))?,
        Some(_) => return Err(ApiError::bad_field("method", "`method` must be a string")),
    };

    let ids: Vec<String> = alphas
        .iter()
        .map(|&a| morph_id(&id, &sweep_settings(method, a)))
        .collect();
    let missing: Vec<(f64, String)> = {
        let morphs = state.morphs.read().await;
        alphas
            .iter()
            .zip(&ids)
            .filter(|(_, mid)| !morphs.contains_key(*mid))
            .map(|(a, mid)| (*a, mid.clone()))
            .collect()
    };
    if !missing.is_empty() {
        let backend = state.backend.clone();
        let todo: Vec<f64> = missing.iter().map(|(a, _)| *a).collect();
        let clips: Vec<(f64, AudioClip)> =
            blocking(move || sweep_recorded(&pair.0, &pair.1, &todo, method, backend.as_ref()))
                .await?;
        let mut morphs = state.morphs.write().await;
        for ((_, clip), (_, mid)) in clips.iter().zip(&missing) {
            morphs.insert(
                mid.clone(),
                Arc::new(clip.to_wav_bytes().map_err(ApiError::from)?),
            );
        }
    }
    Ok(Json(SweepCreated { morph_ids: ids }))
}

pub(crate) async fn morph_audio(
    State(state): Shared,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let wav = state
        .morphs
        .read()
        .await
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("morph", &id))?;
    Ok(wav_response(&wav))
}
