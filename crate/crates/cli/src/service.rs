//! Session-oriented HTTP API over the filter.
//!
//! Each session owns a mark space, filter parameters and a particle set.
//! Clicks to one session are applied one at a time in arrival order (a fair
//! async mutex per session) and the filter work runs on the blocking pool.
//! Sessions idle for longer than the configured timeout are dropped.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clickcast_core::markspace::VisSpec;
use clickcast_core::simulator::{generate_dataset, STUDY_COLORS, STUDY_MARKS};
use clickcast_core::{FilterParams, MarkId, MarkSpace, ParticleSet, Prediction, PredictionSet};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;
use uuid::Uuid;

use crate::params::ParamsBody;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
const DEFAULT_POINTS: usize = 500;
const PI_BINS: usize = 10;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    code: &'static str,
    message: String,
}

/// Error response with a machine-readable code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", r.body_text())
    }
}

/// A built-in dataset to create a session over instead of a posted spec.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    /// Only `"study"`: the synthetic crime-map-sized space.
    pub name: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub spec: Option<VisSpec>,
    pub dataset: Option<DatasetRef>,
    #[serde(default)]
    pub params: ParamsBody,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub marks: usize,
    pub color_count: u32,
    pub params: ParamsBody,
}

#[derive(Debug, Deserialize)]
pub struct ClickBody {
    pub mark_id: MarkId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// Fewer clicks than the warmup; no prediction yet.
    Warmup,
    Ready,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionBody {
    pub t: usize,
    pub status: Status,
    pub prediction: Vec<Prediction<f64>>,
    /// Whether the clicked mark was in the previous prediction; absent when
    /// there was none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub k: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticlesBody {
    pub t: usize,
    pub points: Vec<Point>,
    /// Share of all particles in each of ten equal bias bins over [0, 1].
    pub pi_hist: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub t: usize,
    pub mark_id: MarkId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub t: usize,
    pub predictions: usize,
    pub hits: usize,
    pub history: Vec<HistoryEntry>,
    pub params: ParamsBody,
}

#[derive(Debug, Deserialize)]
pub struct ParticlesQuery {
    pub max: Option<usize>,
}

struct Session {
    space: Arc<MarkSpace<f64>>,
    params: FilterParams<f64>,
    ps: ParticleSet<f64>,
    history: Vec<HistoryEntry>,
    prediction: Option<PredictionSet<f64>>,
}

impl Session {
    fn prediction_body(&self, hit: Option<bool>) -> PredictionBody {
        let (status, prediction) = match &self.prediction {
            Some(p) => (Status::Ready, p.entries.clone()),
            None => (Status::Warmup, Vec::new()),
        };
        PredictionBody {
            t: self.ps.t(),
            status,
            prediction,
            hit,
        }
    }

    /// Same sequence of filter calls as a replay: step, then predict once
    /// the warmup is reached.
    fn click(&mut self, mark_id: MarkId) -> Result<PredictionBody, ApiError> {
        let Some(click) = self.space.click(self.ps.t() + 1, mark_id) else {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "UNKNOWN_MARK",
                format!("mark {mark_id} is not in the session's space"),
            ));
        };
        let hit = self.prediction.as_ref().map(|p| p.contains(mark_id));
        self.ps
            .step(&click, &self.space, &self.params)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "FILTER_ERROR", e.to_string()))?;
        self.prediction = (self.ps.t() >= self.params.warmup).then(|| self.ps.predict(&self.space, &self.params));
        self.history.push(HistoryEntry {
            t: click.t,
            mark_id,
            hit,
        });
        Ok(self.prediction_body(hit))
    }

    fn particles(&self, max: usize) -> ParticlesBody {
        let all = self.ps.particles();
        let stride = all.len().div_ceil(max.max(1)).max(1);
        let points = all
            .iter()
            .step_by(stride)
            .map(|p| Point { x: p.x, y: p.y, k: p.color })
            .collect();
        let mut pi_hist = vec![0.0; PI_BINS];
        for p in all {
            let bin = ((p.bias * PI_BINS as f64) as usize).min(PI_BINS - 1);
            pi_hist[bin] += 1.0;
        }
        pi_hist.iter_mut().for_each(|v| *v /= all.len() as f64);
        ParticlesBody {
            t: self.ps.t(),
            points,
            pi_hist,
        }
    }
}

struct Entry {
    session: Arc<Mutex<Session>>,
    last_active: Instant,
}

/// All live sessions.
pub struct AppState {
    sessions: RwLock<HashMap<Uuid, Entry>>,
    idle_timeout: Duration,
    /// Built-in datasets are generated once per seed and shared.
    datasets: RwLock<HashMap<u64, Arc<MarkSpace<f64>>>>,
}

impl AppState {
    pub fn new(idle_timeout: Duration) -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(HashMap::new()),
            idle_timeout,
            datasets: RwLock::new(HashMap::new()),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    /// Drops sessions idle since before `now - idle_timeout`; returns how many.
    pub fn purge_idle(&self, now: Instant) -> usize {
        let mut map = self.sessions.write().expect("session map poisoned");
        let before = map.len();
        map.retain(|_, e| now.saturating_duration_since(e.last_active) <= self.idle_timeout);
        before - map.len()
    }

    /// Looks a session up and marks it active.
    fn touch(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        let mut map = self.sessions.write().expect("session map poisoned");
        let entry = map.get_mut(&uuid).ok_or_else(|| ApiError::not_found(id))?;
        entry.last_active = Instant::now();
        Ok(entry.session.clone())
    }

    fn study_dataset(&self, seed: u64) -> Arc<MarkSpace<f64>> {
        if let Some(space) = self.datasets.read().expect("dataset cache poisoned").get(&seed) {
            return space.clone();
        }
        let space = Arc::new(generate_dataset(STUDY_MARKS, STUDY_COLORS, seed).expect("study constants are valid"));
        self.datasets
            .write()
            .expect("dataset cache poisoned")
            .entry(seed)
            .or_insert(space)
            .clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/clicks", post(post_click))
        .route("/sessions/{id}/prediction", get(get_prediction))
        .route("/sessions/{id}/particles", get(get_particles))
        .route("/sessions/{id}/space", get(get_space))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Periodically drops idle sessions until the runtime shuts down.
pub fn spawn_reaper(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.idle_timeout / 4).clamp(Duration::from_millis(10), Duration::from_secs(30));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let dropped = state.purge_idle(Instant::now());
            if dropped > 0 {
                tracing::info!(dropped, "expired idle sessions");
            }
        }
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(body) = body?;
    let params = body
        .params
        .to_params()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_PARAMS", e.to_string()))?;
    let space = match (body.spec, body.dataset) {
        (Some(spec), None) => Arc::new(
            spec.into_space()
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_SPEC", e.to_string()))?,
        ),
        (None, Some(d)) if d.name == "study" => {
            let st = state.clone();
            tokio::task::spawn_blocking(move || st.study_dataset(d.seed))
                .await
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))?
        }
        (None, Some(d)) => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "UNKNOWN_DATASET",
                format!("unknown dataset {:?} (expected \"study\")", d.name),
            ))
        }
        _ => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "BAD_REQUEST",
                "give exactly one of spec or dataset",
            ))
        }
    };
    let ps = ParticleSet::init(&space, &params)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_PARAMS", e.to_string()))?;
    let id = Uuid::new_v4();
    let created = Created {
        id: id.to_string(),
        marks: space.len(),
        color_count: space.color_count(),
        params: ParamsBody::describe(&params),
    };
    let session = Session {
        space,
        params,
        ps,
        history: Vec::new(),
        prediction: None,
    };
    state.sessions.write().expect("session map poisoned").insert(
        id,
        Entry {
            session: Arc::new(Mutex::new(session)),
            last_active: Instant::now(),
        },
    );
    tracing::info!(%id, "session created");
    Ok((StatusCode::CREATED, Json(created)))
}

async fn post_click(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ClickBody>, JsonRejection>,
) -> Result<Json<PredictionBody>, ApiError> {
    let Json(body) = body?;
    let session = state.touch(&id)?;
    // The fair mutex queues clicks in arrival order; the guard moves onto the
    // blocking pool for the filter work.
    let mut guard = session.lock_owned().await;
    let out = tokio::task::spawn_blocking(move || guard.click(body.mark_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))??;
    Ok(Json(out))
}

async fn get_prediction(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<PredictionBody>, ApiError> {
    let session = state.touch(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.prediction_body(None)))
}

async fn get_particles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ParticlesQuery>,
) -> Result<Json<ParticlesBody>, ApiError> {
    let session = state.touch(&id)?;
    let guard = session.lock().await;
    Ok(Json(guard.particles(q.max.unwrap_or(DEFAULT_POINTS))))
}

async fn get_space(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<VisSpec>, ApiError> {
    let session = state.touch(&id)?;
    let space = session.lock().await.space.clone();
    Ok(Json(VisSpec::from_space(&space)))
}

async fn session_info(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionInfo>, ApiError> {
    let session = state.touch(&id)?;
    let s = session.lock().await;
    let scored: Vec<bool> = s.history.iter().filter_map(|h| h.hit).collect();
    Ok(Json(SessionInfo {
        id,
        t: s.ps.t(),
        predictions: scored.len(),
        hits: scored.iter().filter(|&&h| h).count(),
        history: s.history.clone(),
        params: ParamsBody::describe(&s.params),
    }))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found(&id))?;
    match state.sessions.write().expect("session map poisoned").remove(&uuid) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}
