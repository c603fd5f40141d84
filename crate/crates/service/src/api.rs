//! Route handlers and their wire types.

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex, TryLockError};
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use capengine_core::backends::{BackendError, BackendKind};
use capengine_core::chat::ToolCall;
use capengine_core::geometry::VisualControl;
use capengine_core::paragraph::{ParagraphOptions, ParagraphResult};
use capengine_core::pipeline::{CaptionRequest, CaptionResult};
use capengine_core::prompts::LanguageControls;
use capengine_core::Error;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cache::CacheStats;
use crate::store::{SessionRecord, StoreError};
use crate::{AppState, SessionSlot};

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown {what}"))
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Geometry(_) | Error::Prompt(_) | Error::InvalidInput(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Backend(BackendError::InvalidRequest(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::SessionBusy => StatusCode::CONFLICT,
            Error::Backend(_) | Error::NoCandidates => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::Undecodable(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub control: Option<VisualControl>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub reply: String,
    pub tool_calls: Vec<ToolCall>,
}

/// Paragraph options; absent fields take the service defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParagraphRequest {
    pub max_regions: Option<usize>,
    pub use_cot: Option<bool>,
    pub min_confidence_ocr: Option<f64>,
    pub parallelism: Option<usize>,
    pub min_area_ratio: Option<f64>,
    pub iou_threshold: Option<f64>,
    pub controls: LanguageControls,
}

impl ParagraphRequest {
    fn options(&self, defaults: &ParagraphOptions) -> ApiResult<ParagraphOptions> {
        let opts = ParagraphOptions {
            max_regions: self.max_regions.unwrap_or(defaults.max_regions),
            use_cot: self.use_cot.unwrap_or(defaults.use_cot),
            min_confidence_ocr: self.min_confidence_ocr.unwrap_or(defaults.min_confidence_ocr),
            parallelism: self.parallelism.unwrap_or(defaults.parallelism),
            min_area_ratio: self.min_area_ratio.unwrap_or(defaults.min_area_ratio),
            iou_threshold: self.iou_threshold.unwrap_or(defaults.iou_threshold),
        };
        if opts.max_regions == 0 || opts.parallelism == 0 {
            return Err(ApiError::unprocessable("max_regions and parallelism must be at least 1"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(opts.min_confidence_ocr) || !unit(opts.min_area_ratio) || !unit(opts.iou_threshold) {
            return Err(ApiError::unprocessable("ratios and thresholds must lie in [0, 1]"));
        }
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub backends: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsResponse {
    pub mask_cache: CacheStats,
    pub images: usize,
    pub sessions: usize,
}

pub(crate) fn router(state: Shared) -> Router {
    let upload_limit = state.config.max_upload_bytes;
    Router::new()
        .route("/v1/images", post(upload).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/v1/images/{id}/caption", post(caption))
        .route("/v1/images/{id}/chat", post(chat))
        .route("/v1/images/{id}/paragraph", post(paragraph))
        .route("/v1/images/{id}/masks/{mask_id}", get(mask))
        .route("/v1/healthz", get(healthz))
        .route("/v1/metrics", get(metrics))
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        method = %method,
        path = %path,
        status = resp.status().as_u16(),
        ms = start.elapsed().as_millis() as u64,
        "request"
    );
    resp
}

/// Runs blocking backend work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::unprocessable(format!("invalid request body: {e}")))
}

fn require_image(state: &AppState, id: &str) -> ApiResult<()> {
    state.store.image(id).map(|_| ()).ok_or_else(|| ApiError::not_found("image"))
}

fn load_image(state: &AppState, id: &str) -> ApiResult<RgbImage> {
    state.store.load_image(id)?.ok_or_else(|| ApiError::not_found("image"))
}

async fn upload(State(state): State<Shared>, body: Body) -> ApiResult<Json<UploadResponse>> {
    let limit = state.config.max_upload_bytes;
    let bytes = axum::body::to_bytes(body, limit).await.map_err(|_| {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, format!("image exceeds {limit} bytes"))
    })?;
    blocking(move || {
        let (image_id, meta) = state.store.put_image(&bytes)?;
        Ok(Json(UploadResponse { image_id, width: meta.dims.width, height: meta.dims.height }))
    })
    .await
}

async fn caption(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<CaptionResult>> {
    require_image(&state, &id)?;
    let req: CaptionRequest = parse_body(&body)?;
    blocking(move || {
        let image = load_image(&state, &id)?;
        let mut result = state.pipeline.caption_object(&image, &req)?;
        result.mask_id = Some(state.store.put_mask(&id, &result.mask)?);
        Ok(Json(result))
    })
    .await
}

async fn chat(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<ChatResponse>> {
    require_image(&state, &id)?;
    let req: ChatRequest = parse_body(&body)?;
    if req.message.trim().is_empty() {
        return Err(ApiError::unprocessable("message is empty"));
    }
    blocking(move || {
        let image = load_image(&state, &id)?;
        let slot = match (&req.session_id, req.control) {
            (Some(sid), None) => {
                let slot = state.sessions.lock().unwrap().get(sid).cloned();
                match slot {
                    Some(s) if s.image_id == id => s,
                    _ => return Err(ApiError::not_found("session")),
                }
            }
            (Some(_), Some(_)) => {
                return Err(ApiError::unprocessable("control is only accepted when starting a session"))
            }
            (None, None) => return Err(ApiError::unprocessable("the first message needs a control")),
            (None, Some(control)) => start_session(&state, &id, &image, control)?,
        };

        let mut session = match slot.session.try_lock() {
            Ok(s) => s,
            Err(TryLockError::WouldBlock) => return Err(Error::SessionBusy.into()),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let before = session.messages.len();
        let outcome = state.chat.chat_turn(&mut session, &image, &req.message)?;
        state.store.append_session(&session.id, &session.messages[before..])?;
        Ok(Json(ChatResponse {
            session_id: session.id.clone(),
            reply: outcome.reply,
            tool_calls: outcome.tool_calls,
        }))
    })
    .await
}

/// Segments and captions the selected object (unrefined) to seed a new
/// session, then persists the session header.
fn start_session(
    state: &AppState,
    image_id: &str,
    image: &RgbImage,
    control: VisualControl,
) -> ApiResult<Arc<SessionSlot>> {
    let req = CaptionRequest { refine: false, ..CaptionRequest::new(control) };
    let seeded = state.pipeline.caption_object(image, &req)?;
    let mask_id = state.store.put_mask(image_id, &seeded.mask)?;
    let session_id = format!("s{}", state.next_session.fetch_add(1, Ordering::SeqCst));
    let session = state.chat.start_session(
        &session_id,
        image_id,
        seeded.mask.dims(),
        seeded.mask.clone(),
        &seeded.raw_caption,
    )?;
    state.store.create_session(&SessionRecord::Header {
        session_id: session_id.clone(),
        image_id: image_id.to_string(),
        mask_id,
        mask: seeded.mask,
        seed_caption: seeded.raw_caption,
    })?;
    let slot = Arc::new(SessionSlot { image_id: image_id.to_string(), session: Mutex::new(session) });
    state.sessions.lock().unwrap().insert(session_id, slot.clone());
    Ok(slot)
}

async fn paragraph(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<ParagraphResult>> {
    require_image(&state, &id)?;
    let req: ParagraphRequest = parse_body(&body)?;
    let opts = req.options(&state.paragraph_defaults)?;
    blocking(move || {
        let image = load_image(&state, &id)?;
        let masks = state.cache.get_or_try_insert(&id, || {
            state.pipeline.backends().segmenter.segment_everything(&image).map_err(Error::from)
        })?;
        let mut result =
            state.paragraph.caption_everything_from_masks(&image, masks.to_vec(), &req.controls, &opts)?;
        for dense in &mut result.dense {
            if let Some(mask) = &dense.mask {
                dense.mask_id = state.store.put_mask(&id, mask)?;
            }
        }
        Ok(Json(result))
    })
    .await
}

async fn mask(State(state): State<Shared>, Path((id, mask_id)): Path<(String, String)>) -> ApiResult<Response> {
    require_image(&state, &id)?;
    let rle = state.store.mask(&id, &mask_id).ok_or_else(|| ApiError::not_found("mask"))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], rle.to_json()).into_response())
}

async fn healthz(State(state): State<Shared>) -> ApiResult<Json<HealthResponse>> {
    blocking(move || {
        let b = state.pipeline.backends();
        // Probe every kind at once so a slow remote cannot stack timeouts.
        let results: Vec<(BackendKind, bool)> = std::thread::scope(|s| {
            let probes = [
                (BackendKind::Segmenter, s.spawn(|| b.segmenter.probe())),
                (BackendKind::Captioner, s.spawn(|| b.captioner.probe())),
                (BackendKind::Refiner, s.spawn(|| b.refiner.probe())),
                (BackendKind::Vqa, s.spawn(|| b.vqa.probe())),
                (BackendKind::Ocr, s.spawn(|| b.ocr.probe())),
            ];
            probes.map(|(k, h)| (k, h.join().unwrap_or(false))).into()
        });
        let all_ok = results.iter().all(|(_, ok)| *ok);
        Ok(Json(HealthResponse {
            status: if all_ok { "ok" } else { "degraded" }.into(),
            backends: results
                .into_iter()
                .map(|(k, ok)| (k.as_str().to_string(), if ok { "ok" } else { "unreachable" }.to_string()))
                .collect(),
        }))
    })
    .await
}

async fn metrics(State(state): State<Shared>) -> Json<MetricsResponse> {
    Json(MetricsResponse {
        mask_cache: state.cache.stats(),
        images: state.store.image_count(),
        sessions: state.sessions.lock().unwrap().len(),
    })
}
