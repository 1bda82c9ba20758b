//! HTTP session service.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/sessions` | multipart: `volume`, `init_seg`, `init_prob`, optional `checkpoint`, `gt`, `seed` | `{"id", "dims", "spacing"}` |
//! | GET | `/sessions/{id}` | | session summary |
//! | GET | `/sessions/{id}/slice?axis=&index=&layer=` | | raw little-endian plane, dims in `x-slice-info` |
//! | POST | `/sessions/{id}/scribbles` | SCRB file or JSON stroke | cumulative counts |
//! | POST | `/sessions/{id}/refine` | optional JSON overrides | round summary; 409 while another runs |
//! | GET | `/sessions/{id}/result` | | label map as NRRD |
//! | GET | `/sessions/{id}/reports` | | report rows as JSON lines |
//! | DELETE | `/sessions/{id}` | | 204 |
//!
//! Errors are JSON `{"error": "..."}` with 404 for an unknown session, 400
//! for a malformed request, 409 when busy, and 422 for well-formed input
//! that fails validation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use monet::io::{decode_nrrd, decode_scribbles, encode_label_map, NrrdImage};
use monet::metrics::write_reports;
use monet::model::MonetParams;
use monet::session::{PipelineConfig, RefineOverrides, Session, SessionOptions};
use monet::volume::{Dims, Label, LabelMap, ProbMap, Volume};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::scribble_json::Stroke;

/// Uploads larger than this are refused.
const BODY_LIMIT: usize = 1 << 30;

/// Settings for sessions that do not bring their own.
#[derive(Debug, Clone, Default)]
pub struct Defaults {
    pub config: PipelineConfig,
    pub params: Option<MonetParams<f32>>,
    pub seed: u64,
}

struct Slot {
    session: Arc<Mutex<Session>>,
    refining: AtomicBool,
    last_used: StdMutex<Instant>,
}

impl Slot {
    fn touch(&self) {
        *self.last_used.lock().expect("clock lock") = Instant::now();
    }
}

pub struct AppState {
    sessions: StdMutex<HashMap<String, Arc<Slot>>>,
    defaults: Defaults,
    ttl: Duration,
}

impl AppState {
    pub fn new(defaults: Defaults, ttl: Duration) -> Arc<Self> {
        Arc::new(AppState {
            sessions: StdMutex::new(HashMap::new()),
            defaults,
            ttl,
        })
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let slot = self
            .sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))?;
        slot.touch();
        Ok(slot)
    }

    /// Drops idle sessions; never one with a refine in flight.
    pub fn expire(&self, now: Instant) -> usize {
        let mut table = self.sessions.lock().expect("session table lock");
        let before = table.len();
        table.retain(|_, s| {
            s.refining.load(Ordering::Acquire) || now.duration_since(*s.last_used.lock().expect("clock lock")) < self.ttl
        });
        before - table.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session table lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<monet::Error> for ApiError {
    fn from(e: monet::Error) -> Self {
        use monet::Error as E;
        let status = match e.root() {
            E::Parse { .. } | E::Truncated { .. } => StatusCode::BAD_REQUEST,
            E::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/slice", get(slice))
        .route("/sessions/{id}/scribbles", post(add_scribbles))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/result", get(result))
        .route("/sessions/{id}/reports", get(reports))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Serves until the process is stopped, sweeping idle sessions in the
/// background.
pub async fn serve(bind: &str, ttl: Duration, defaults: Defaults) -> anyhow::Result<()> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .try_init();
    let state = AppState::new(defaults, ttl);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval((ttl / 4).max(Duration::from_secs(1)));
        loop {
            tick.tick().await;
            let n = sweeper.expire(Instant::now());
            if n > 0 {
                tracing::info!(expired = n, "dropped idle sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

fn dims_array(d: Dims) -> [usize; 3] {
    [d.nx, d.ny, d.nz]
}

fn image_part(name: &str, bytes: &[u8]) -> ApiResult<NrrdImage> {
    decode_nrrd(bytes).map_err(|e| ApiError::bad_request(format!("{name}: {e}")))
}

async fn create_session(State(state): State<Arc<AppState>>, mut form: Multipart) -> ApiResult<Json<Created>> {
    let mut parts: HashMap<String, Bytes> = HashMap::new();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("multipart: {e}")))?;
        parts.insert(name, data);
    }
    for name in parts.keys() {
        if !["volume", "init_seg", "init_prob", "checkpoint", "gt", "seed"].contains(&name.as_str()) {
            return Err(ApiError::bad_request(format!("unexpected part {name:?}")));
        }
    }
    let need = |name: &str| {
        parts
            .get(name)
            .ok_or_else(|| ApiError::bad_request(format!("missing part {name:?}")))
    };
    let vol = image_part("volume", need("volume")?)?;
    let seg = image_part("init_seg", need("init_seg")?)?;
    let prob = image_part("init_prob", need("init_prob")?)?;
    let volume = Volume::new(vol.header.dims, vol.header.spacing, vol.samples.to_f32())?;
    let init_seg = labels_from(seg)?;
    let init_prob = ProbMap::with_spacing(prob.header.dims, prob.header.spacing, prob.samples.to_f32())?;
    let gt = parts
        .get("gt")
        .map(|b| image_part("gt", b).and_then(labels_from))
        .transpose()?;
    let params = match parts.get("checkpoint") {
        Some(b) => Some(MonetParams::from_checkpoint(b).map_err(|e| ApiError::bad_request(format!("checkpoint: {e}")))?),
        None => state.defaults.params.clone(),
    };
    let seed = match parts.get("seed") {
        Some(b) => std::str::from_utf8(b)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ApiError::bad_request("seed must be an unsigned integer"))?,
        None => state.defaults.seed,
    };

    let id = uuid::Uuid::new_v4().to_string();
    let opts = SessionOptions {
        config: state.defaults.config.clone(),
        seed,
        params,
        ground_truth: gt,
        record_timings: true,
    };
    let session = tokio::task::spawn_blocking({
        let id = id.clone();
        move || Session::new(id, volume, init_seg, init_prob, opts)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let created = Created {
        id: id.clone(),
        dims: dims_array(session.volume().dims()),
        spacing: session.volume().spacing().as_array(),
    };
    let slot = Arc::new(Slot {
        session: Arc::new(Mutex::new(session)),
        refining: AtomicBool::new(false),
        last_used: StdMutex::new(Instant::now()),
    });
    state.sessions.lock().expect("session table lock").insert(id, slot);
    Ok(Json(created))
}

fn labels_from(img: NrrdImage) -> ApiResult<LabelMap> {
    let values = img.samples.to_f32();
    let labels = values
        .iter()
        .map(|&v| match v {
            0.0 => Ok(0),
            1.0 => Ok(1),
            _ => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("label value {v} is not 0 or 1"))),
        })
        .collect::<ApiResult<Vec<u8>>>()?;
    Ok(LabelMap::with_spacing(img.header.dims, img.header.spacing, labels)?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub round: usize,
    pub status: String,
    pub foreground_scribbles: usize,
    pub background_scribbles: usize,
}

async fn session_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let slot = state.slot(&id)?;
    let status = if slot.refining.load(Ordering::Acquire) {
        "refining"
    } else {
        "idle"
    };
    let s = slot.session.lock().await;
    Ok(Json(SessionInfo {
        id,
        dims: dims_array(s.volume().dims()),
        round: s.round(),
        status: status.into(),
        foreground_scribbles: s.scribbles().foreground().len(),
        background_scribbles: s.scribbles().background().len(),
    }))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    match state.sessions.lock().expect("session table lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// Intensities as uploaded (f32).
    Image,
    /// Initial segmentation (u8).
    Labels,
    /// Latest result, or the initial segmentation before any round (u8).
    Result,
    /// Latest foreground probability, or the initial one (f32).
    Prob,
    /// Latest scribble weights; zero before any round (f32).
    Weights,
    /// 0 unmarked, 1 foreground, 2 background (u8).
    Scribbles,
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    pub axis: Axis,
    pub index: usize,
    pub layer: Layer,
}

/// Describes a slice body; sent as JSON in the `x-slice-info` header.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SliceInfo {
    pub axis: Axis,
    pub index: usize,
    /// Samples per row.
    pub width: usize,
    pub rows: usize,
    /// `"f32"` or `"u8"`.
    pub dtype: String,
}

/// Row-major plane: for `z` rows run along y with x fastest, for `y` rows
/// run along z with x fastest, for `x` rows run along z with y fastest.
fn plane_indices(d: Dims, axis: Axis, k: usize) -> (usize, usize, Vec<usize>) {
    match axis {
        Axis::Z => (
            d.nx,
            d.ny,
            (0..d.ny)
                .flat_map(|y| (0..d.nx).map(move |x| d.index_unchecked(x, y, k)))
                .collect(),
        ),
        Axis::Y => (
            d.nx,
            d.nz,
            (0..d.nz)
                .flat_map(|z| (0..d.nx).map(move |x| d.index_unchecked(x, k, z)))
                .collect(),
        ),
        Axis::X => (
            d.ny,
            d.nz,
            (0..d.nz)
                .flat_map(|z| (0..d.ny).map(move |y| d.index_unchecked(k, y, z)))
                .collect(),
        ),
    }
}

async fn slice(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let d = s.volume().dims();
    let extent = match q.axis {
        Axis::X => d.nx,
        Axis::Y => d.ny,
        Axis::Z => d.nz,
    };
    if q.index >= extent {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("slice {} is outside 0..{extent}", q.index),
        ));
    }
    let (width, rows, idx) = plane_indices(d, q.axis, q.index);
    let floats = |f: &dyn Fn(usize) -> f32| idx.iter().flat_map(|&i| f(i).to_le_bytes()).collect::<Vec<u8>>();
    let (dtype, body) = match q.layer {
        Layer::Image => ("f32", floats(&|i| s.original().data()[i])),
        Layer::Prob => {
            let p = s.result().map_or(s.init_prob(), |r| &r.prob);
            ("f32", floats(&|i| p.prob()[i]))
        }
        Layer::Weights => match s.result() {
            Some(r) => ("f32", floats(&|i| r.weights.get(i) as f32)),
            None => ("f32", vec![0; 4 * idx.len()]),
        },
        Layer::Labels => ("u8", idx.iter().map(|&i| s.init_labels().labels()[i]).collect()),
        Layer::Result => ("u8", idx.iter().map(|&i| s.current_labels().labels()[i]).collect()),
        Layer::Scribbles => (
            "u8",
            idx.iter()
                .map(|&i| match s.scribbles().label_at(i) {
                    None => 0,
                    Some(Label::Foreground) => 1,
                    Some(Label::Background) => 2,
                })
                .collect(),
        ),
    };
    let info = SliceInfo {
        axis: q.axis,
        index: q.index,
        width,
        rows,
        dtype: dtype.into(),
    };
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    headers.insert(
        "x-slice-info",
        HeaderValue::from_str(&serde_json::to_string(&info).expect("slice info serializes")).expect("ascii header"),
    );
    Ok((headers, body).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScribbleCounts {
    pub foreground: usize,
    pub background: usize,
    pub total: usize,
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

async fn add_scribbles(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<ScribbleCounts>> {
    let slot = state.slot(&id)?;
    let mut s = slot.session.lock().await;
    if is_json(&headers) {
        let stroke: Stroke =
            serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("stroke: {e}")))?;
        let mut next = s.scribbles().clone();
        stroke.apply(&mut next)?;
        s.set_scribbles(next)?;
    } else {
        let add = decode_scribbles(&body)?;
        s.add_scribbles(&add)?;
    }
    let sc = s.scribbles();
    Ok(Json(ScribbleCounts {
        foreground: sc.foreground().len(),
        background: sc.background().len(),
        total: sc.len(),
    }))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Timings {
    pub weights: f64,
    pub train: f64,
    pub infer: f64,
    pub graphcut: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RefineResponse {
    pub round: usize,
    pub timings: Timings,
    pub changed_voxels: usize,
    pub scribble_voxels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assd: Option<f64>,
}

/// Clears the busy flag however the request ends.
struct Busy<'a>(&'a AtomicBool);

impl Drop for Busy<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

async fn refine(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<RefineResponse>> {
    let overrides: RefineOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        RefineOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("overrides: {e}")))?
    };
    let slot = state.slot(&id)?;
    if slot.refining.swap(true, Ordering::AcqRel) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a refine is already running"));
    }
    let _busy = Busy(&slot.refining);
    let mut guard = slot.session.clone().lock_owned().await;
    let out = tokio::task::spawn_blocking(move || guard.refine_round(&overrides))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    slot.touch();
    let t = out.times;
    Ok(Json(RefineResponse {
        round: out.report.round,
        timings: Timings {
            weights: t.weights,
            train: t.train,
            infer: t.infer,
            graphcut: t.graphcut,
        },
        changed_voxels: out.changed_voxels,
        scribble_voxels: out.report.scribble_voxels,
        dice: out.report.dice,
        assd: out.report.assd,
    }))
}

async fn result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let bytes = encode_label_map(s.current_labels());
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    headers.insert("x-round", HeaderValue::from(s.round()));
    Ok((headers, bytes).into_response())
}

async fn reports(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    let s = slot.session.lock().await;
    let mut buf = Vec::new();
    write_reports(&mut buf, s.reports()).expect("writing to memory");
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], buf).into_response())
}
