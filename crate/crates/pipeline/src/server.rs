//! JSON HTTP API under `/api/v1` for the annotation front end.
//!
//! Documents (worm annotations, stripe labels) are versioned: `GET` returns
//! the version in `ETag`, and `PUT` must carry `If-Match` with the version it
//! was based on. A stale version is rejected with 409 and the stored document
//! is left untouched. Training runs one job at a time in the background and
//! the new model replaces the current one only once the job has finished.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wormscreen::fluor::{StripeLabel, StripeLabelFile};
use wormscreen::imagecore::io::encode_png8;
use wormscreen::imagecore::trace_outline;
use wormscreen::phenotype::{PlateManifest, Task, WellRecord};
use wormscreen::segmenter::ImageAnnotations;

use crate::commands::{self, Context};
use crate::error::{PipelineError, Result};
use crate::models::{ModelKind, ModelSet, Registry};
use crate::process::{blobs_for, load_image, segment};
use crate::record::now_ms;
use crate::workspace::{check_id, DocumentStore};

pub struct AppState {
    pub ctx: Context,
    pub registry: Registry,
    doc_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    jobs: Mutex<JobBoard>,
}

impl AppState {
    pub fn new(ctx: Context) -> Result<Self> {
        let models = ctx.models()?;
        Ok(AppState {
            ctx,
            registry: Registry::new(models),
            doc_locks: Mutex::default(),
            jobs: Mutex::default(),
        })
    }

    fn doc_lock(&self, key: String) -> Arc<tokio::sync::Mutex<()>> {
        self.doc_locks.lock().expect("lock table").entry(key).or_default().clone()
    }

    fn manifest(&self) -> Result<PlateManifest> {
        self.ctx.manifest(None)
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/images", get(list_images))
        .route("/api/v1/images/{id}/blobs", get(image_blobs))
        .route("/api/v1/images/{id}/hard-negatives", get(hard_negatives))
        .route("/api/v1/images/{id}/{channel}", get(image_png))
        .route("/api/v1/annotations/{id}", get(get_annotations).put(put_annotations))
        .route("/api/v1/stripe-labels/{id}", get(get_stripe_labels).put(put_stripe_labels))
        .route("/api/v1/train/{kind}", post(start_training))
        .route("/api/v1/jobs", get(list_jobs))
        .route("/api/v1/jobs/{id}", get(get_job))
        .route("/api/v1/models", get(list_models))
        .route("/api/v1/plates/{plate_id}/report", get(plate_report))
        .with_state(state)
}

pub async fn serve(state: Shared, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| PipelineError::Config(format!("cannot listen on {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| PipelineError::Config(format!("server: {e}")))
}

// ------------------------------------------------------------------ errors

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    current_version: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            current_version: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            PipelineError::Invalid(_) => ApiError::bad_request(message),
            PipelineError::MissingModel(_) => ApiError::new(StatusCode::CONFLICT, "missing_model", message),
            PipelineError::Conflict { current, .. } => ApiError {
                current_version: Some(current),
                ..ApiError::new(StatusCode::CONFLICT, "version_conflict", message)
            },
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(v) = self.current_version {
            body["current_version"] = json!(v);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    Ok(tokio::task::spawn_blocking(f).await??)
}

fn find_well<'a>(manifest: &'a PlateManifest, id: &str) -> ApiResult<&'a WellRecord> {
    manifest
        .wells
        .iter()
        .find(|w| w.well_id == id)
        .ok_or_else(|| PipelineError::NotFound(format!("image {id}")).into())
}

// ------------------------------------------------------------------ images

async fn health(State(st): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "models": st.registry.snapshot().ids() }))
}

#[derive(Serialize)]
struct ImageEntry {
    image_id: String,
    plate_id: String,
    role: wormscreen::phenotype::Role,
    known_label: Option<wormscreen::phenotype::Phenotype>,
    annotation_version: u64,
    stripe_label_version: u64,
}

async fn list_images(State(st): State<Shared>) -> ApiResult<Json<Vec<ImageEntry>>> {
    let manifest = st.manifest()?;
    let (ann, labels) = (st.ctx.ws.annotations(), st.ctx.ws.stripe_labels());
    let mut out = Vec::with_capacity(manifest.wells.len());
    for w in &manifest.wells {
        out.push(ImageEntry {
            image_id: w.well_id.clone(),
            plate_id: w.plate_id.clone(),
            role: w.role,
            known_label: w.known_label,
            annotation_version: ann.version(&w.well_id)?,
            stripe_label_version: labels.version(&w.well_id)?,
        });
    }
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
struct ViewQuery {
    x: Option<usize>,
    y: Option<usize>,
    w: Option<usize>,
    h: Option<usize>,
    #[serde(default)]
    log: bool,
}

/// An 8-bit PNG rendering of one channel, optionally cropped, stretched to
/// the crop's own range.
async fn image_png(
    State(st): State<Shared>,
    Path((id, channel)): Path<(String, String)>,
    Query(q): Query<ViewQuery>,
) -> ApiResult<Response> {
    check_id(&id)?;
    let manifest = st.manifest()?;
    let well = find_well(&manifest, &id)?;
    let rel = match channel.as_str() {
        "bf" => well.bf_path.clone(),
        "fl" => well.fl_path.clone(),
        other => return Err(PipelineError::NotFound(format!("channel {other:?}")).into()),
    };
    let path = manifest.resolve(&rel);
    let png = blocking(move || {
        let img = load_image(&path)?.image;
        let (iw, ih) = img.dims();
        let view = img.crop(q.x.unwrap_or(0), q.y.unwrap_or(0), q.w.unwrap_or(iw), q.h.unwrap_or(ih))?;
        let view = if q.log { view.map(|v| v.max(0.0).ln_1p()) } else { view };
        let (lo, hi) = view.min_max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        Ok(encode_png8(&view.map(|v| (v - lo) / span))?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize)]
struct BlobView {
    blob_id: usize,
    outline: Vec<(i64, i64)>,
    area: usize,
    centroid: (f64, f64),
    stripe_score: Option<f64>,
    label: Option<StripeLabel>,
}

/// Candidate blobs of the fluorescence image with their current labels.
async fn image_blobs(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<BlobView>>> {
    check_id(&id)?;
    let st2 = st.clone();
    let views = blocking(move || {
        let manifest = st2.manifest()?;
        let well = find_well(&manifest, &id).map_err(|_| PipelineError::NotFound(format!("image {id}")))?;
        let models = st2.registry.snapshot();
        let blob_cfg = models.stripe.as_ref().map(|s| s.model.blob.clone()).unwrap_or_else(|| st2.ctx.cfg.stripes.blob.clone());
        let fl = load_image(&manifest.resolve(&well.fl_path))?;
        let segmented = match &models.segmenter {
            Some(seg) => Some(segment(seg, &load_image(&manifest.resolve(&well.bf_path))?, &st2.ctx.cache())?),
            None => None,
        };
        let blobs = blobs_for(&fl.image, &blob_cfg, segmented.as_ref())?;
        let labels: BTreeMap<usize, StripeLabel> = match st2.ctx.ws.stripe_labels().get(&id)? {
            Some((bytes, _)) => serde_json::from_slice::<StripeLabelFile>(&bytes)
                .map(|f| f.blobs.into_iter().map(|b| (b.blob_id, b.label)).collect())
                .unwrap_or_default(),
            None => BTreeMap::new(),
        };
        Ok(blobs
            .iter()
            .map(|b| BlobView {
                blob_id: b.id,
                outline: trace_outline(&b.region),
                area: b.area(),
                centroid: b.region.centroid,
                stripe_score: models.stripe.as_ref().map(|s| s.model.score(b)),
                label: labels.get(&b.id).copied(),
            })
            .collect())
    })
    .await?;
    Ok(Json(views))
}

#[derive(Deserialize)]
struct MiningQuery {
    top_m: Option<usize>,
}

async fn hard_negatives(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<MiningQuery>,
) -> ApiResult<Json<serde_json::Value>> {
    check_id(&id)?;
    let st2 = st.clone();
    let body = blocking(move || {
        let manifest = st2.manifest()?;
        let well = find_well(&manifest, &id).map_err(|_| PipelineError::NotFound(format!("image {id}")))?;
        let models = st2.registry.snapshot();
        let seg = models.segmenter()?;
        let top_m = q.top_m.unwrap_or(seg.model.config.mining_top_m);
        let negatives = commands::hard_negatives(&st2.ctx, &manifest, seg, well, top_m)?;
        Ok(json!({ "image_id": id, "model_id": seg.id, "top_m": top_m, "negatives": negatives }))
    })
    .await?;
    Ok(Json(body))
}

// ------------------------------------------------------------------ documents

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("digits are a valid header")
}

fn if_match(headers: &HeaderMap) -> ApiResult<u64> {
    let raw = headers.get(header::IF_MATCH).ok_or_else(|| {
        ApiError::new(
            StatusCode::PRECONDITION_REQUIRED,
            "if_match_required",
            "PUT requires If-Match with the version being replaced (\"0\" to create)",
        )
    })?;
    raw.to_str()
        .ok()
        .map(|s| s.trim().trim_start_matches("W/").trim_matches('"'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::bad_request("If-Match must be a quoted version number"))
}

fn get_document(store: &DocumentStore, id: &str, what: &str) -> ApiResult<Response> {
    check_id(id)?;
    let (bytes, version) = store
        .get(id)?
        .ok_or_else(|| PipelineError::NotFound(format!("{what} for {id}")))?;
    let mut resp = ([(header::CONTENT_TYPE, "application/json")], bytes).into_response();
    resp.headers_mut().insert(header::ETAG, etag(version));
    Ok(resp)
}

async fn put_document(
    st: &AppState,
    store: DocumentStore,
    id: &str,
    headers: &HeaderMap,
    body: Bytes,
    validate: impl FnOnce(&[u8]) -> std::result::Result<(), String>,
) -> ApiResult<Response> {
    check_id(id)?;
    find_well(&st.manifest()?, id)?;
    let expected = if_match(headers)?;
    validate(&body).map_err(ApiError::bad_request)?;
    let lock = st.doc_lock(format!("{}/{id}", store.dir.display()));
    let _guard = lock.lock().await;
    let version = store.put(id, &body, expected)?;
    let mut resp = Json(json!({ "image_id": id, "version": version })).into_response();
    resp.headers_mut().insert(header::ETAG, etag(version));
    Ok(resp)
}

async fn get_annotations(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    get_document(&st.ctx.ws.annotations(), &id, "annotations")
}

async fn put_annotations(
    State(st): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let want = id.clone();
    put_document(&st, st.ctx.ws.annotations(), &id, &headers, body, move |b| {
        let a: ImageAnnotations = serde_json::from_slice(b).map_err(|e| format!("annotations: {e}"))?;
        if a.image_id != want {
            return Err(format!("document is for image {:?}, not {want:?}", a.image_id));
        }
        a.validate().map_err(|e| e.to_string())
    })
    .await
}

async fn get_stripe_labels(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    get_document(&st.ctx.ws.stripe_labels(), &id, "stripe labels")
}

async fn put_stripe_labels(
    State(st): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let want = id.clone();
    put_document(&st, st.ctx.ws.stripe_labels(), &id, &headers, body, move |b| {
        let f: StripeLabelFile = serde_json::from_slice(b).map_err(|e| format!("stripe labels: {e}"))?;
        if f.image_id != want {
            return Err(format!("document is for image {:?}, not {want:?}", f.image_id));
        }
        Ok(())
    })
    .await
}

// ------------------------------------------------------------------ training jobs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: ModelKind,
    pub status: JobStatus,
    pub model_id: Option<String>,
    pub error: Option<String>,
    pub summary: Option<serde_json::Value>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
}

#[derive(Default)]
struct JobBoard {
    next: u64,
    running: Option<u64>,
    jobs: BTreeMap<u64, Job>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
pub struct TrainRequest {
    pub wells: Vec<String>,
    /// Stripe training only: label blobs from the plate's truth stripe masks.
    pub from_truth: bool,
    /// Phenotype training only.
    pub task: Option<Task>,
}

async fn start_training(State(st): State<Shared>, Path(kind): Path<String>, body: Bytes) -> ApiResult<Response> {
    let kind: ModelKind = kind.parse()?;
    let req: TrainRequest = if body.is_empty() {
        TrainRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("train request: {e}")))?
    };
    let id = {
        let mut board = st.jobs.lock().expect("job board");
        if let Some(running) = board.running {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "busy",
                format!("training job {running} is still running"),
            ));
        }
        board.next += 1;
        let id = board.next;
        board.running = Some(id);
        board.jobs.insert(
            id,
            Job {
                id,
                kind,
                status: JobStatus::Running,
                model_id: None,
                error: None,
                summary: None,
                started_unix_ms: now_ms(),
                finished_unix_ms: None,
            },
        );
        id
    };
    let st2 = st.clone();
    tokio::task::spawn_blocking(move || {
        let result = st2.ctx.recorded(&format!("train-{kind}"), |ctx| train_and_install(ctx, &st2.registry, kind, &req));
        let mut board = st2.jobs.lock().expect("job board");
        board.running = None;
        if let Some(job) = board.jobs.get_mut(&id) {
            job.finished_unix_ms = Some(now_ms());
            match result {
                Ok(outcome) => {
                    job.status = JobStatus::Succeeded;
                    job.model_id = outcome.model_ids.get(&kind).cloned();
                    job.summary = Some(outcome.summary);
                }
                Err(e) => {
                    job.status = JobStatus::Failed;
                    job.error = Some(e.to_string());
                }
            }
        }
    });
    let job = st.jobs.lock().expect("job board").jobs[&id].clone();
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

fn train_and_install(ctx: &Context, registry: &Registry, kind: ModelKind, req: &TrainRequest) -> Result<commands::Outcome> {
    match kind {
        ModelKind::Segmenter => {
            let t = commands::train_segmenter_cmd(ctx, &req.wells)?;
            registry.install_segmenter(t.id, t.model);
            Ok(t.outcome)
        }
        ModelKind::Stripe => {
            let t = commands::train_stripe_cmd(ctx, &req.wells, req.from_truth)?;
            registry.install_stripe(t.id, t.model);
            Ok(t.outcome)
        }
        ModelKind::Phenotype => {
            let t = commands::train_phenotype_cmd(ctx, req.task, &req.wells)?;
            registry.install_phenotype(t.id, t.model);
            Ok(t.outcome)
        }
    }
}

async fn list_jobs(State(st): State<Shared>) -> Json<Vec<Job>> {
    Json(st.jobs.lock().expect("job board").jobs.values().cloned().collect())
}

async fn get_job(State(st): State<Shared>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    st.jobs
        .lock()
        .expect("job board")
        .jobs
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| PipelineError::NotFound(format!("job {id}")).into())
}

async fn list_models(State(st): State<Shared>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(json!({
        "current": st.registry.snapshot().ids(),
        "config_hash": st.ctx.config_hash,
    })))
}

async fn plate_report(State(st): State<Shared>, Path(plate_id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let st2 = st.clone();
    let report = blocking(move || {
        let mut manifest = st2.manifest()?;
        manifest.wells.retain(|w| w.plate_id == plate_id);
        if manifest.wells.is_empty() {
            return Err(PipelineError::NotFound(format!("plate {plate_id}")));
        }
        let models: Arc<ModelSet> = st2.registry.snapshot();
        let (_, report) = commands::classify_with(&st2.ctx, &manifest, &models)?;
        serde_json::to_value(report).map_err(PipelineError::json("plate report"))
    })
    .await?;
    Ok(Json(report))
}
