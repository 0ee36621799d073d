//! HTTP service for inspecting a model, predicting, and running edit jobs.
//!
//! Reads never wait for a running job: they see the previous model until
//! the job swaps the new one in.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use semode_core::benchmark::evaluate;
use semode_core::model::Inspection;
use semode_core::{apply_edits, Dataset, EditSpec, SemanticModel, TrajectoryMode};

/// Largest number of trajectory points returned by one request.
pub const MAX_POINTS: usize = 2000;
const CURVE_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobReport {
    pub seconds: f64,
    pub fit_rmse_old: f64,
    pub fit_rmse_new: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_rmse_old: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_rmse_new: Option<f64>,
}

#[derive(Debug, Clone)]
enum Job {
    Idle,
    Running(Instant),
    Done(JobReport),
    Failed(String),
}

struct Inner {
    /// Models in load order; the last one is current.
    history: Vec<SemanticModel>,
    data: Option<Dataset>,
    test: Option<Dataset>,
    job: Job,
}

/// Server state shared by all handlers.
pub struct Session {
    inner: RwLock<Inner>,
}

impl Session {
    pub fn new(model: Option<SemanticModel>, data: Option<Dataset>, test: Option<Dataset>) -> Arc<Self> {
        Arc::new(Session {
            inner: RwLock::new(Inner {
                history: model.into_iter().collect(),
                data,
                test,
                job: Job::Idle,
            }),
        })
    }

    pub fn current(&self) -> Option<SemanticModel> {
        self.inner.read().unwrap().history.last().cloned()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), field: None }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.into()),
        }
    }

    fn no_model() -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "no model loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = Value::String(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;
type Params = Query<HashMap<String, String>>;

fn to_value<T: Serialize>(v: &T) -> Result<Value, ApiError> {
    serde_json::to_value(v).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

fn runtime(e: semode_core::Error) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn number(q: &HashMap<String, String>, name: &str) -> Result<Option<f64>, ApiError> {
    match q.get(name) {
        None => Ok(None),
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(ApiError::field(name, format!("`{name}` must be a finite number, got `{s}`"))),
        },
    }
}

fn required(q: &HashMap<String, String>, name: &str) -> Result<f64, ApiError> {
    number(q, name)?.ok_or_else(|| ApiError::field(name, format!("missing query parameter `{name}`")))
}

fn model_of(s: &Session) -> Result<SemanticModel, ApiError> {
    s.current().ok_or_else(ApiError::no_model)
}

async fn get_model(State(s): State<Arc<Session>>) -> ApiResult {
    let (model, depth) = {
        let inner = s.inner.read().unwrap();
        (inner.history.last().cloned().ok_or_else(ApiError::no_model)?, inner.history.len())
    };
    let inspection: Inspection = model.inspect(CURVE_POINTS).map_err(runtime)?;
    Ok(Json(json!({
        "model": to_value(&model)?,
        "boundaries": model.composition_map.boundaries(),
        "compositions": model.composition_map.compositions().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "inspection": to_value(&inspection)?,
        "history": depth,
    })))
}

async fn get_semantics(State(s): State<Arc<Session>>, Query(q): Params) -> ApiResult {
    let model = model_of(&s)?;
    let x0 = required(&q, "x0")?;
    let rep = model.predict_semantics(x0).map_err(runtime)?;
    to_value(&rep).map(Json)
}

async fn get_predict(State(s): State<Arc<Session>>, Query(q): Params) -> ApiResult {
    let model = model_of(&s)?;
    let x0 = required(&q, "x0")?;
    let points = match number(&q, "points")? {
        None => CURVE_POINTS,
        Some(p) if p >= 2.0 && p.fract() == 0.0 => (p as usize).min(MAX_POINTS),
        Some(p) => return Err(ApiError::field("points", format!("`points` must be an integer >= 2, got {p}"))),
    };
    let t0 = model.ranges.t0;
    let t_max = number(&q, "t_max")?.unwrap_or(model.ranges.t_max);
    if !(t_max > t0) {
        return Err(ApiError::field("t_max", format!("`t_max` must exceed {t0}")));
    }
    let mode = match q.get("mode") {
        None => TrajectoryMode::InferC2,
        Some(m) => m.parse().map_err(|e: semode_core::Error| ApiError::field("mode", e.to_string()))?,
    };
    let tr = model.predict_trajectory(x0, mode).map_err(runtime)?;
    let times: Vec<f64> = (0..points).map(|i| t0 + (t_max - t0) * i as f64 / (points - 1) as f64).collect();
    let values = tr.values(&times);
    let data = {
        let inner = s.inner.read().unwrap();
        inner.data.as_ref().and_then(|d| {
            let (lo, hi) = d.x0_range()?;
            let tol = 1e-3 * (hi - lo).max(1e-12);
            let near = d
                .samples
                .iter()
                .min_by(|a, b| (a.x0 - x0).abs().total_cmp(&(b.x0 - x0).abs()))
                .filter(|smp| (smp.x0 - x0).abs() <= tol)?;
            let predicted = tr.values(&near.times);
            Some(json!({
                "sample_id": near.id,
                "x0": near.x0,
                "times": near.times,
                "values": near.values,
                "predicted": predicted,
                "rmse": semode_core::benchmark::rmse(&predicted, &near.values),
            }))
        })
    };
    Ok(Json(json!({
        "x0": x0,
        "composition": tr.semantics.composition.to_string(),
        "c2_status": tr.c2_status,
        "t_end": tr.t_end(),
        "times": times,
        "values": values,
        "data": data,
    })))
}

fn score(model: &SemanticModel, d: &Dataset) -> semode_core::Result<f64> {
    let after = d.meta.parameters.get("out_domain").and_then(Value::as_bool).unwrap_or(false).then_some(1.0);
    evaluate(model, &d.samples, after)
}

async fn post_edit(State(s): State<Arc<Session>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let spec: EditSpec =
        serde_json::from_slice(&body).map_err(|e| ApiError::field("edits", format!("invalid edit spec: {e}")))?;
    let (model, data, test) = {
        let mut inner = s.inner.write().unwrap();
        if matches!(inner.job, Job::Running(_)) {
            return Err(ApiError::new(StatusCode::CONFLICT, "a fit job is already running"));
        }
        let model = inner.history.last().cloned().ok_or_else(ApiError::no_model)?;
        let data = inner
            .data
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "no dataset is bound to this session"))?;
        inner.job = Job::Running(Instant::now());
        (model, data, inner.test.clone())
    };
    let session = s.clone();
    tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let result = apply_edits(&model, &spec, &data.samples, None).and_then(|edited| {
            let report = JobReport {
                seconds: 0.0,
                fit_rmse_old: score(&model, &data)?,
                fit_rmse_new: score(&edited, &data)?,
                test_rmse_old: test.as_ref().map(|t| score(&model, t)).transpose()?,
                test_rmse_new: test.as_ref().map(|t| score(&edited, t)).transpose()?,
            };
            Ok((edited, report))
        });
        let mut inner = session.inner.write().unwrap();
        inner.job = match result {
            Ok((edited, mut report)) => {
                report.seconds = start.elapsed().as_secs_f64();
                inner.history.push(edited);
                Job::Done(report)
            }
            Err(e) => Job::Failed(e.to_string()),
        };
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "state": "running" }))))
}

async fn get_job(State(s): State<Arc<Session>>) -> ApiResult {
    let inner = s.inner.read().unwrap();
    Ok(Json(match &inner.job {
        Job::Idle => json!({ "state": "idle" }),
        Job::Running(t) => json!({ "state": "running", "elapsed": t.elapsed().as_secs_f64() }),
        Job::Done(r) => json!({ "state": "done", "report": to_value(r)? }),
        Job::Failed(reason) => json!({ "state": "failed", "reason": reason }),
    }))
}

async fn post_revert(State(s): State<Arc<Session>>) -> ApiResult {
    let mut inner = s.inner.write().unwrap();
    if matches!(inner.job, Job::Running(_)) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a fit job is running"));
    }
    match inner.history.len() {
        0 => Err(ApiError::no_model()),
        1 => Err(ApiError::new(StatusCode::CONFLICT, "nothing to revert")),
        _ => {
            inner.history.pop();
            Ok(Json(json!({ "history": inner.history.len() })))
        }
    }
}

fn summary(d: &Dataset) -> Value {
    json!({
        "system": d.meta.system,
        "samples": d.samples.len(),
        "observations": d.n_observations(),
        "x0_range": d.x0_range(),
        "time_range": d.time_range(),
        "noise": d.meta.noise,
        "seed": d.meta.seed,
        "parameters": d.meta.parameters,
    })
}

async fn get_dataset_summary(State(s): State<Arc<Session>>) -> ApiResult {
    let inner = s.inner.read().unwrap();
    let d = inner.data.as_ref().ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no dataset loaded"))?;
    let mut out = summary(d);
    if let Some(t) = &inner.test {
        out["test"] = summary(t);
    }
    Ok(Json(out))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

/// All API routes; static files from `static_dir` are served at `/`.
pub fn router(session: Arc<Session>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/model", get(get_model))
        .route("/api/semantics", get(get_semantics))
        .route("/api/predict", get(get_predict))
        .route("/api/edit", post(post_edit))
        .route("/api/job", get(get_job))
        .route("/api/revert", post(post_revert))
        .route("/api/dataset/summary", get(get_dataset_summary))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .with_state(session);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

/// Serves until the process is stopped.
pub async fn serve(session: Arc<Session>, cfg: ServeConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session, cfg.static_dir)).await
}
