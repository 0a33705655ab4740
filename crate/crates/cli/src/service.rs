//! Local HTTP service for interactive field labeling.
//!
//! Training runs on one background thread. Observers read snapshots that
//! the trainer publishes at epoch boundaries; label edits go through a queue
//! that the trainer drains at the next boundary, so weights never change in
//! the middle of an epoch.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nesi_core::data::visible_labels;
use nesi_core::eval::{assign_field_labels, field_stats, test_error, AssignMode};
use nesi_core::model::Weights;
use nesi_core::train::{Control, EpochStats, StopReason, TrainConfig, Trainer, Variant};

use crate::commands::LoadedData;

/// State visible to observers, replaced at epoch boundaries.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub weights: Weights,
    pub history: Vec<EpochStats>,
    pub stop_reason: Option<StopReason>,
    pub variant: Variant,
    pub running: bool,
}

#[derive(Debug, Default)]
struct ControlState {
    paused: bool,
    stop: bool,
}

/// Data and configuration needed to (re)start training.
pub struct Session {
    pub data: LoadedData,
    pub config: TrainConfig,
}

pub struct AppState {
    snapshot: RwLock<Snapshot>,
    control: Mutex<ControlState>,
    wake: Condvar,
    queue: Mutex<VecDeque<BTreeMap<usize, usize>>>,
    session: Option<Arc<Session>>,
    shape: (usize, usize),
    /// Training-set size used for expected field counts.
    train_size: usize,
}

impl AppState {
    pub fn new(
        weights: Weights,
        history: Vec<EpochStats>,
        variant: Variant,
        session: Option<Session>,
        shape: (usize, usize),
        train_size: usize,
    ) -> Arc<Self> {
        Arc::new(Self {
            snapshot: RwLock::new(Snapshot {
                weights,
                history,
                stop_reason: None,
                variant,
                running: false,
            }),
            control: Mutex::new(ControlState::default()),
            wake: Condvar::new(),
            queue: Mutex::new(VecDeque::new()),
            session: session.map(Arc::new),
            shape,
            train_size,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn drain_labels(&self) -> Vec<BTreeMap<usize, usize>> {
        self.queue.lock().expect("queue lock").drain(..).collect()
    }

    /// Starts a background training session of `extra_epochs` more epochs.
    /// Returns `false` if a session is already running.
    pub fn start_training(
        self: &Arc<Self>,
        extra_epochs: usize,
        variant: Option<Variant>,
        uniform_top: Option<bool>,
    ) -> Result<bool, String> {
        let session = self
            .session
            .clone()
            .ok_or_else(|| "no training data configured".to_string())?;
        let (weights, history) = {
            let mut snap = self.snapshot.write().expect("snapshot lock");
            if snap.running {
                return Ok(false);
            }
            snap.running = true;
            snap.stop_reason = None;
            if let Some(v) = variant {
                snap.variant = v;
            }
            (snap.weights.clone(), snap.history.clone())
        };
        {
            let mut ctl = self.control.lock().expect("control lock");
            ctl.stop = false;
        }
        let mut config = session.config.clone();
        config.variant = self.snapshot().variant;
        if let Some(u) = uniform_top {
            config.uniform_top = u;
        }
        config.epochs = history.len() + extra_epochs;
        let state = Arc::clone(self);
        std::thread::spawn(move || {
            let data = &session.data;
            let labels = visible_labels(&data.train.labels, &data.mask);
            let result = Trainer::resume(&data.train.obs, labels, config, weights, history)
                .and_then(|trainer| trainer.run(|t| state.epoch_boundary(t)));
            let mut snap = state.snapshot.write().expect("snapshot lock");
            match result {
                Ok(report) => {
                    snap.weights = report.weights;
                    snap.history = report.history;
                    snap.stop_reason = Some(report.stop_reason);
                }
                Err(e) => {
                    log::error!("training failed: {e}");
                    snap.stop_reason = Some(StopReason::UserAbort);
                }
            }
            // labels that arrived during the last epoch are still applied
            for labels in state.drain_labels() {
                match assign_field_labels(&snap.weights, &labels, AssignMode::Weighted) {
                    Ok(w) => snap.weights = w,
                    Err(e) => log::error!("dropping invalid label set: {e}"),
                }
            }
            snap.running = false;
        });
        Ok(true)
    }

    fn publish(&self, trainer: &Trainer) {
        let mut snap = self.snapshot.write().expect("snapshot lock");
        snap.weights = trainer.weights().clone();
        snap.history = trainer.history().to_vec();
    }

    fn apply_queued(&self, trainer: &mut Trainer) {
        let pending = self.drain_labels();
        if pending.is_empty() {
            return;
        }
        for labels in pending {
            if let Err(e) = trainer.assign_fields(&labels, AssignMode::Weighted) {
                log::error!("dropping invalid label set: {e}");
            }
        }
        self.publish(trainer);
    }

    fn epoch_boundary(&self, trainer: &mut Trainer) -> Control {
        self.publish(trainer);
        loop {
            self.apply_queued(trainer);
            let ctl = self.control.lock().expect("control lock");
            if ctl.stop {
                return Control::Stop;
            }
            if !ctl.paused {
                return Control::Continue;
            }
            let _ = self
                .wake
                .wait_timeout(ctl, Duration::from_millis(200))
                .expect("control lock");
        }
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

async fn status(State(state): State<Arc<AppState>>) -> Json<Value> {
    let snap = state.snapshot();
    let paused = state.control.lock().expect("control lock").paused;
    let loglik: Vec<Option<f64>> = snap.history.iter().map(|e| e.loglik).collect();
    Json(json!({
        "epoch": snap.history.len(),
        "loglik_history": loglik,
        "self_labels": snap.history.iter().map(|e| e.self_labels).collect::<Vec<_>>(),
        "stop_reason": snap.stop_reason.map(|r| r.as_str()),
        "running": snap.running,
        "paused": paused,
        "variant": snap.variant.as_str(),
    }))
}

#[derive(Debug, Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Field {
    unit: usize,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    p_c: f64,
    class: usize,
}

/// Scales a weight row to bytes, darkest entry 0 and brightest 255.
fn thumbnail(row: &[f64]) -> Vec<u8> {
    let min = row.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let span = max - min;
    row.iter()
        .map(|&v| {
            if span > 0.0 {
                (255.0 * (v - min) / span).round() as u8
            } else {
                0
            }
        })
        .collect()
}

async fn fields(State(state): State<Arc<AppState>>, Query(page): Query<Page>) -> Json<Value> {
    let snap = state.snapshot();
    let stats = field_stats(&snap.weights, state.train_size);
    let units = snap.weights.units();
    let offset = page.offset.unwrap_or(0).min(units);
    let limit = page.limit.unwrap_or(100);
    let end = offset.saturating_add(limit).min(units);
    let (width, height) = state.shape;
    let list: Vec<Field> = (offset..end)
        .map(|c| Field {
            unit: c,
            width,
            height,
            pixels: thumbnail(&snap.weights.w().row(c).to_vec()),
            p_c: stats.prior[c],
            class: stats.class[c],
        })
        .collect();
    Json(json!({ "total": units, "offset": offset, "fields": list }))
}

/// Parses `{"unit": class, ...}` and checks both ranges.
#[allow(clippy::result_large_err)]
fn parse_labels(
    body: &[u8],
    units: usize,
    classes: usize,
) -> Result<BTreeMap<usize, usize>, Response> {
    let map: BTreeMap<String, Value> = serde_json::from_slice(body)
        .map_err(|e| error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))?;
    let mut out = BTreeMap::new();
    let mut invalid = Vec::new();
    for (unit, class) in map {
        let c = unit.parse::<usize>().ok().filter(|&c| c < units);
        let k = class.as_u64().map(|k| k as usize).filter(|&k| k < classes);
        match (c, k) {
            (Some(c), Some(k)) => {
                out.insert(c, k);
            }
            _ => invalid.push(unit),
        }
    }
    if !invalid.is_empty() {
        return Err((
            StatusCode::BAD_REQUEST,
            Json(json!({
                "error": format!("units must be < {units} and classes < {classes}"),
                "invalid": invalid,
            })),
        )
            .into_response());
    }
    Ok(out)
}

async fn labels(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let (units, classes, running) = {
        let snap = state.snapshot.read().expect("snapshot lock");
        (snap.weights.units(), snap.weights.classes(), snap.running)
    };
    let map = match parse_labels(&body, units, classes) {
        Ok(m) => m,
        Err(resp) => return resp,
    };
    let count = map.len();
    if !running {
        let mut snap = state.snapshot.write().expect("snapshot lock");
        if snap.running {
            drop(snap);
            return enqueue(&state, map, count);
        }
        return match assign_field_labels(&snap.weights, &map, AssignMode::Weighted) {
            Ok(w) => {
                snap.weights = w;
                (
                    StatusCode::OK,
                    Json(json!({ "status": "applied", "count": count })),
                )
                    .into_response()
            }
            Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
        };
    }
    enqueue(&state, map, count)
}

fn enqueue(state: &AppState, map: BTreeMap<usize, usize>, count: usize) -> Response {
    state.queue.lock().expect("queue lock").push_back(map);
    let paused = state.control.lock().expect("control lock").paused;
    state.wake.notify_all();
    if paused {
        (
            StatusCode::OK,
            Json(json!({ "status": "accepted", "count": count })),
        )
            .into_response()
    } else {
        // applied at the next epoch boundary, never dropped
        (
            StatusCode::CONFLICT,
            Json(json!({ "status": "queued", "count": count })),
        )
            .into_response()
    }
}

async fn control(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let action = value.get("action").and_then(Value::as_str).unwrap_or("");
    {
        let mut ctl = state.control.lock().expect("control lock");
        match action {
            "pause" => ctl.paused = true,
            "resume" => ctl.paused = false,
            "stop" => {
                ctl.stop = true;
                ctl.paused = false;
            }
            other => {
                return error(StatusCode::BAD_REQUEST, format!("unknown action {other:?}"));
            }
        }
    }
    state.wake.notify_all();
    let paused = state.control.lock().expect("control lock").paused;
    Json(json!({ "status": "ok", "action": action, "paused": paused })).into_response()
}

async fn metrics(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.snapshot();
    let epoch = snap.history.len();
    let Some(session) = state.session.clone() else {
        return Json(json!({ "epoch": epoch, "test_error": Value::Null })).into_response();
    };
    let mode = snap.variant.mode();
    let result = tokio::task::spawn_blocking(move || {
        session
            .data
            .test
            .as_ref()
            .map(|t| test_error(&snap.weights, &t.obs, &t.labels, mode))
            .transpose()
    })
    .await;
    match result {
        Ok(Ok(err)) => Json(json!({ "epoch": epoch, "test_error": err })).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Debug, Deserialize, Default)]
struct TrainRequest {
    epochs: Option<usize>,
    variant: Option<String>,
    uniform_top: Option<bool>,
}

async fn start_train(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: TrainRequest = if body.is_empty() {
        TrainRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
        }
    };
    let variant = match req
        .variant
        .as_deref()
        .map(str::parse::<Variant>)
        .transpose()
    {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let epochs = req
        .epochs
        .unwrap_or_else(|| state.session.as_ref().map_or(0, |s| s.config.epochs));
    match state.start_training(epochs, variant, req.uniform_top) {
        Ok(true) => (
            StatusCode::ACCEPTED,
            Json(json!({ "status": "started", "epochs": epochs })),
        )
            .into_response(),
        Ok(false) => error(
            StatusCode::CONFLICT,
            "a training session is already running",
        ),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/status", get(status))
        .route("/v1/fields", get(fields))
        .route("/v1/labels", post(labels))
        .route("/v1/control", post(control))
        .route("/v1/metrics", get(metrics))
        .route("/v1/train", post(start_train))
        .with_state(state)
}
