//! Local HTTP backend for interactive mask annotation.
//!
//! A session holds one uploaded image and a working mask. Clients grow
//! contour candidates from a seed ellipse, pick one, refine it with wand
//! strokes, undo, and finally save the mask as a PNG. Images and masks travel
//! as PNG bodies; everything else is JSON.

mod error;
mod session;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use meltpool_core::annotate::{finalize_mask, generate_candidates, wand_select, BrushStroke, MgacParams, SeedEllipse};
use meltpool_core::raster::save_mask;
use meltpool_core::{BinaryMask, Raster};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

pub use error::{ApiError, ApiResult};
pub use session::{CachedCandidates, Session, SessionStore, SESSION_TTL, UNDO_DEPTH};

pub const DEFAULT_PORT: u16 = 8787;

/// Uploads up to this many bytes are accepted.
pub const MAX_UPLOAD: usize = 64 << 20;

#[derive(Clone, Default)]
pub struct AppState {
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn with_ttl(ttl: Duration) -> Self {
        Self {
            sessions: Arc::new(SessionStore::new(ttl)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

/// Seed ellipse as sent by clients; `rot` is in radians.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedRequest {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub rot: f64,
}

impl From<SeedRequest> for SeedEllipse {
    fn from(s: SeedRequest) -> Self {
        SeedEllipse {
            cx: s.cx,
            cy: s.cy,
            a: s.a,
            b: s.b,
            rotation: s.rot,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub index: usize,
    pub url: String,
    pub area: usize,
    pub preset: MgacParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateList {
    pub candidates: Vec<CandidateInfo>,
    pub preview_url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WandRequest {
    pub strokes: Vec<BrushStroke>,
    pub tolerance: f32,
}

/// Working-mask summary returned by every editing call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskState {
    pub url: String,
    pub area: usize,
    pub undo_depth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaveRequest {
    pub out_path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Saved {
    pub path: PathBuf,
    pub area: usize,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/image", get(get_image))
        .route("/sessions/{id}/mgac", post(mgac))
        .route("/sessions/{id}/candidates/{k}", get(get_candidate))
        .route("/sessions/{id}/candidates/{k}/select", post(select_candidate))
        .route("/sessions/{id}/wand", post(wand))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/mask", get(get_mask))
        .route("/sessions/{id}/save", post(save))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Serves on 127.0.0.1 until the process is stopped. Expired sessions are
/// swept once a minute.
pub async fn serve(port: u16) -> std::io::Result<()> {
    let state = AppState::default();
    let sweeper = state.sessions.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.purge_expired();
            if n > 0 {
                log::info!("dropped {n} idle sessions");
            }
        }
    });
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{addr}");
    axum::serve(listener, router(state)).await
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn mask_png(mask: &BinaryMask) -> ApiResult<Response> {
    Ok(png(mask.to_png_bytes()?))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    state
        .sessions
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
}

fn mask_state(id: &str, s: &Session) -> Json<MaskState> {
    Json(MaskState {
        url: format!("/sessions/{id}/mask"),
        area: s.mask.count(),
        undo_depth: s.undo_depth(),
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<SessionCreated>> {
    let image = blocking(move || Raster::from_bytes(&body)).await??;
    let (width, height) = (image.width(), image.height());
    let id = state.sessions.insert(Session::new(image));
    log::info!("session {id}: {width}x{height} image");
    Ok(Json(SessionCreated { id, width, height }))
}

async fn get_image(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    Ok(png(s.image.to_png_bytes()?))
}

async fn mgac(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(seed): Json<SeedRequest>,
) -> ApiResult<Json<CandidateList>> {
    let session = lookup(&state, &id)?;
    let mut s = session.lock().await;
    let seed = SeedEllipse::from(seed);
    seed.validate(s.image.width(), s.image.height())?;

    let cached = match &s.candidates {
        Some(c) if c.seed == seed => c.clone(),
        _ => {
            let image = s.image.clone();
            let computed = blocking(move || -> meltpool_core::Result<CachedCandidates> {
                let set = generate_candidates(&image, &seed)?;
                let pngs = set
                    .candidates
                    .iter()
                    .map(|m| m.to_png_bytes())
                    .collect::<meltpool_core::Result<Vec<_>>>()?;
                let preview_png = set.preview.to_png_bytes()?;
                Ok(CachedCandidates {
                    seed,
                    set,
                    pngs,
                    preview_png,
                })
            })
            .await??;
            let computed = Arc::new(computed);
            s.candidates = Some(computed.clone());
            computed
        }
    };
    let candidates = cached
        .set
        .candidates
        .iter()
        .zip(&cached.set.params)
        .enumerate()
        .map(|(index, (m, p))| CandidateInfo {
            index,
            url: format!("/sessions/{id}/candidates/{index}"),
            area: m.count(),
            preset: *p,
        })
        .collect();
    Ok(Json(CandidateList {
        candidates,
        preview_url: format!("/sessions/{id}/candidates/preview"),
    }))
}

fn candidate_index(k: &str, count: usize) -> ApiResult<usize> {
    match k.parse::<usize>() {
        Ok(i) if i < count => Ok(i),
        _ => Err(ApiError::unprocessable(format!(
            "candidate index must be in 0..{count}, got {k}"
        ))),
    }
}

fn cached_candidates(s: &Session) -> ApiResult<Arc<CachedCandidates>> {
    s.candidates
        .clone()
        .ok_or_else(|| ApiError::conflict("no candidates computed for this session"))
}

async fn get_candidate(State(state): State<AppState>, Path((id, k)): Path<(String, String)>) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    let c = cached_candidates(&s)?;
    if k == "preview" {
        return Ok(png(c.preview_png.clone()));
    }
    let i = candidate_index(&k, c.pngs.len())?;
    Ok(png(c.pngs[i].clone()))
}

async fn select_candidate(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, String)>,
) -> ApiResult<Json<MaskState>> {
    let session = lookup(&state, &id)?;
    let mut s = session.lock().await;
    let c = cached_candidates(&s)?;
    let i = candidate_index(&k, c.set.candidates.len())?;
    s.replace_mask(c.set.candidates[i].clone());
    Ok(mask_state(&id, &s))
}

async fn wand(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<WandRequest>,
) -> ApiResult<Json<MaskState>> {
    let session = lookup(&state, &id)?;
    let mut s = session.lock().await;
    for stroke in &req.strokes {
        stroke.validate()?;
    }
    let image = s.image.clone();
    let current = s.mask.clone();
    let next = blocking(move || wand_select(&image, &req.strokes, req.tolerance, Some(&current))).await??;
    s.replace_mask(next);
    Ok(mask_state(&id, &s))
}

async fn undo(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MaskState>> {
    let session = lookup(&state, &id)?;
    let mut s = session.lock().await;
    if !s.undo() {
        return Err(ApiError::conflict("nothing to undo"));
    }
    Ok(mask_state(&id, &s))
}

async fn get_mask(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    mask_png(&s.mask)
}

async fn save(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SaveRequest>,
) -> ApiResult<Json<Saved>> {
    let session = lookup(&state, &id)?;
    let s = session.lock().await;
    if s.mask.is_empty() {
        return Err(ApiError::conflict("working mask is empty"));
    }
    let mask = finalize_mask(&s.mask)?;
    save_mask(&mask, &req.out_path)?;
    log::info!("session {id}: saved {} px to {}", mask.count(), req.out_path.display());
    Ok(Json(Saved {
        path: req.out_path,
        area: mask.count(),
    }))
}
