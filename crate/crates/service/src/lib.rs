//! HTTP decision service.
//!
//! Scores PSA questionnaires, serves handoff-tree and handoff-forest
//! predictions, and records the human decision made on a predicted case.
//! Predictions and decisions are appended to a newline-delimited JSON log
//! that is replayed on start, so prediction ids survive restarts.

use std::collections::{HashMap, HashSet};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use pretrial_core::data::FeatureMap;
use pretrial_core::psa::{assess, render_court_report, CaseMetadata, FactorVector, Offense, PsaConfig, PsaError, RiskAssessment};
use pretrial_core::tree::RiskLabel;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use uuid::Uuid;

mod log;
mod model;
mod records;

pub use log::{DecisionLog, LogEntry, LOG_SCHEMA};
pub use model::{LeafListing, Model, Scored};
pub use records::{DecisionRecord, HumanDecision, PredictionSnapshot};

pub const API_SCHEMA: &str = "pretrial-api/v1";
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("decision log: {0}")]
    Log(String),
    #[error("decision log replay: {0}")]
    Replay(String),
}

pub struct ServiceConfig {
    pub psa: PsaConfig,
    pub model: Option<Model>,
    pub log_path: PathBuf,
    /// When set, every request must present it as a bearer token.
    pub token: Option<String>,
}

#[derive(Default)]
struct Store {
    predictions: HashMap<Uuid, PredictionSnapshot>,
    decided: HashSet<Uuid>,
    decisions: Vec<DecisionRecord>,
}

impl Store {
    fn apply(&mut self, entry: LogEntry) -> Result<(), String> {
        match entry {
            LogEntry::Prediction(p) => {
                if self.predictions.insert(p.prediction_id, p).is_some() {
                    return Err("prediction id issued twice".into());
                }
            }
            LogEntry::Decision(d) => {
                if !self.predictions.contains_key(&d.prediction_id) {
                    return Err(format!("decision {} refers to unknown prediction {}", d.decision_id, d.prediction_id));
                }
                if !self.decided.insert(d.prediction_id) {
                    return Err(format!("prediction {} decided twice", d.prediction_id));
                }
                self.decisions.push(d);
            }
        }
        Ok(())
    }
}

struct Inner {
    psa: PsaConfig,
    model: Option<(Model, String)>,
    token: Option<String>,
    log: Mutex<DecisionLog>,
    store: RwLock<Store>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens the log and replays it.
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let (log, entries) = DecisionLog::open(&config.log_path)?;
        let mut store = Store::default();
        for (i, e) in entries.into_iter().enumerate() {
            store.apply(e).map_err(|m| ServiceError::Replay(format!("entry {}: {m}", i + 1)))?;
        }
        let model = config.model.map(|m| {
            let v = m.version();
            (m, v)
        });
        Ok(Self {
            inner: Arc::new(Inner {
                psa: config.psa,
                model,
                token: config.token,
                log: Mutex::new(log),
                store: RwLock::new(store),
            }),
        })
    }

    /// All decisions in log order.
    pub fn decisions(&self) -> Vec<DecisionRecord> {
        self.inner.store.read().expect("store lock").decisions.clone()
    }

    pub fn model_version(&self) -> Option<&str> {
        self.inner.model.as_ref().map(|(_, v)| v.as_str())
    }

    /// Appends under the single writer lock and applies the entry to the
    /// in-memory view only once it is durable.
    async fn append(
        &self,
        entry: LogEntry,
        check: impl FnOnce(&Store) -> Result<(), ApiError> + Send + 'static,
    ) -> Result<(), ApiError> {
        let inner = self.inner.clone();
        tokio::task::spawn_blocking(move || {
            let mut log = inner.log.lock().expect("log lock");
            check(&inner.store.read().expect("store lock"))?;
            log.append(&entry).map_err(|e| ApiError::internal(e.to_string()))?;
            inner.store.write().expect("store lock").apply(entry).map_err(ApiError::internal)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    invariant: Option<&'static str>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), invariant: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn no_model() -> Self {
        Self::new(StatusCode::CONFLICT, "no_model", "no model is loaded; start the service with --model")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(inv) = self.invariant {
            error["invariant"] = json!(inv);
        }
        (self.status, Json(json!({ "schema": API_SCHEMA, "error": error }))).into_response()
    }
}

fn psa_error(e: PsaError) -> ApiError {
    match e {
        PsaError::InvalidFactors { invariant, detail } => {
            let mut err = ApiError::new(StatusCode::BAD_REQUEST, "invalid_factors", detail);
            err.invariant = Some(invariant);
            err
        }
        other => ApiError::bad_request(other.to_string()),
    }
}

/// Parses a JSON body, checking the optional schema tag.
fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    let value: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    check_schema(&value)?;
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn check_schema(value: &Value) -> Result<(), ApiError> {
    match value.get("schema") {
        None => Ok(()),
        Some(Value::String(s)) if s == API_SCHEMA => Ok(()),
        Some(other) => Err(ApiError::bad_request(format!("unsupported schema {other}, expected {API_SCHEMA:?}"))),
    }
}

#[derive(Deserialize)]
struct AssessRequest {
    factors: FactorVector,
    #[serde(default)]
    offenses: Vec<Offense>,
    #[serde(default)]
    metadata: CaseMetadata,
}

#[derive(Serialize)]
struct AssessResponse {
    schema: &'static str,
    assessment: RiskAssessment,
    report: String,
}

async fn post_assess(State(state): State<AppState>, body: Bytes) -> Result<Json<AssessResponse>, ApiError> {
    let req: AssessRequest = parse_body(&body)?;
    req.factors.validate().map_err(psa_error)?;
    let psa = &state.inner.psa;
    let assessment = assess(&req.factors, &req.offenses, psa).map_err(psa_error)?;
    let report = render_court_report(&assessment, &req.factors, &req.metadata, &req.offenses, &psa.matrix);
    Ok(Json(AssessResponse { schema: API_SCHEMA, assessment, report }))
}

#[derive(Deserialize)]
struct PredictRequest {
    #[serde(default)]
    case_ref: Option<String>,
    features: FeatureMap,
}

#[derive(Serialize)]
struct PredictionResponse {
    schema: &'static str,
    #[serde(flatten)]
    prediction: PredictionSnapshot,
}

async fn post_predict(State(state): State<AppState>, body: Bytes) -> Result<Json<PredictionResponse>, ApiError> {
    let (model, version) = state.inner.model.as_ref().ok_or_else(ApiError::no_model)?;
    let req: PredictRequest = parse_body(&body)?;
    let s = model.predict(&req.features).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let handoff = s.label == RiskLabel::Handoff;
    let snapshot = PredictionSnapshot {
        prediction_id: Uuid::new_v4(),
        case_ref: req.case_ref,
        label: s.label,
        error_rate: if handoff { None } else { s.error_rate },
        leaf_id: s.leaf_id,
        path: s.path,
        support: s.n,
        positives: (!handoff).then_some(s.k),
        disagreement: s.disagreement,
        model_kind: model.kind().to_string(),
        model_version: version.clone(),
        issued_at: Utc::now(),
    };
    state.append(LogEntry::Prediction(snapshot.clone()), |_| Ok(())).await?;
    Ok(Json(PredictionResponse { schema: API_SCHEMA, prediction: snapshot }))
}

async fn post_decision(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let value: Value = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    check_schema(&value)?;
    let obj = value.as_object().ok_or_else(|| ApiError::bad_request("body must be a JSON object"))?;
    let field = |name: &str| obj.get(name).filter(|v| !v.is_null());
    let prediction_id = match field("prediction_id") {
        None => return Err(ApiError::unprocessable("prediction_id is required")),
        Some(v) => v
            .as_str()
            .and_then(|s| Uuid::parse_str(s).ok())
            .ok_or_else(|| ApiError::unprocessable(format!("prediction_id {v} is not a UUID")))?,
    };
    let decision = match field("decision") {
        None => return Err(ApiError::unprocessable("decision is required (release, release_with_conditions or detain)")),
        Some(v) => v.as_str().and_then(HumanDecision::parse).ok_or_else(|| {
            ApiError::unprocessable(format!("decision {v} must be release, release_with_conditions or detain"))
        })?,
    };
    let text = |name: &str| -> Result<Option<String>, ApiError> {
        match field(name) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(ApiError::unprocessable(format!("{name} must be a string, got {v}"))),
        }
    };
    let rationale = text("rationale")?.unwrap_or_default();
    if decision == HumanDecision::Detain && rationale.trim().is_empty() {
        return Err(ApiError::unprocessable("a detain decision needs a rationale"));
    }
    let decider = text("decider")?.unwrap_or_else(|| "unspecified".to_string());

    let prediction = state
        .inner
        .store
        .read()
        .expect("store lock")
        .predictions
        .get(&prediction_id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_prediction", format!("no prediction {prediction_id}")))?;
    let record = DecisionRecord {
        decision_id: Uuid::new_v4(),
        prediction_id,
        case_ref: prediction.case_ref.clone(),
        prediction,
        decision,
        rationale,
        decided_at: Utc::now(),
        decider,
    };
    state
        .append(LogEntry::Decision(record.clone()), move |store| {
            if store.decided.contains(&prediction_id) {
                Err(ApiError::new(StatusCode::CONFLICT, "already_decided", format!("prediction {prediction_id} already has a decision")))
            } else {
                Ok(())
            }
        })
        .await?;
    let mut body = serde_json::to_value(&record).expect("record serializes");
    body["schema"] = json!(API_SCHEMA);
    Ok((StatusCode::CREATED, Json(body)))
}

#[derive(Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Serialize)]
pub struct DecisionPage {
    pub schema: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<DecisionRecord>,
}

async fn get_decisions(State(state): State<AppState>, Query(page): Query<Page>) -> Result<Json<DecisionPage>, ApiError> {
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be between 1 and {MAX_PAGE}")));
    }
    let offset = page.offset.unwrap_or(0);
    let store = state.inner.store.read().expect("store lock");
    let items = store.decisions.iter().skip(offset).take(limit).cloned().collect();
    Ok(Json(DecisionPage { schema: API_SCHEMA.into(), total: store.decisions.len(), offset, limit, items }))
}

async fn get_model(State(state): State<AppState>) -> Json<Value> {
    let model = state.inner.model.as_ref().map(|(m, v)| {
        json!({
            "kind": m.kind(),
            "format": m.format(),
            "version": v,
            "training_size": m.training_size(),
            "config": m.config_json(),
        })
    });
    Json(json!({ "schema": API_SCHEMA, "loaded": model.is_some(), "model": model }))
}

async fn get_leaves(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let (model, version) = state.inner.model.as_ref().ok_or_else(ApiError::no_model)?;
    let mut body = serde_json::to_value(model.leaves()).expect("leaves serialize");
    body["schema"] = json!(API_SCHEMA);
    body["model_version"] = json!(version);
    body["training_size"] = json!(model.training_size());
    Ok(Json(body))
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, request: Request, next: Next) -> Response {
    if let Some(token) = &state.inner.token {
        let presented = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/assess", post(post_assess))
        .route("/predict", post(post_predict))
        .route("/decisions", post(post_decision).get(get_decisions))
        .route("/model", get(get_model))
        .route("/leaves", get(get_leaves))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
