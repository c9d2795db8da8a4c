//! HTTP sessions for interactive seeding.
//!
//! | route | effect |
//! |---|---|
//! | `POST /sessions` | load an image and its packs |
//! | `GET /sessions/{id}/slice?axis&index` | grayscale PNG of one slice |
//! | `PUT /sessions/{id}/params` | set `gamma`, `beta`, `epsilon`, `m_use` |
//! | `POST /sessions/{id}/seeds` | solve for the full seed set |
//! | `DELETE /sessions/{id}` | drop the session |

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine;
use fastwalk_core::adaptive::AdaptivePolicy;
use fastwalk_core::fast::{precompute, PackSet, SpectralPack};
use fastwalk_core::image::Image;
use fastwalk_core::phantom::{make_phantom, PhantomKind};
use fastwalk_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::io::load_image;
use crate::pack::load_pack;
use crate::segment::{BasisSize, Segmenter};
use crate::seeds::Seed;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    gamma: f64,
    epsilon: f64,
    m_use: Option<usize>,
    adaptive: bool,
}

impl Default for Params {
    fn default() -> Self {
        Self { gamma: 0.0, epsilon: 0.1, m_use: None, adaptive: true }
    }
}

struct Session {
    segmenter: Segmenter,
    params: Params,
    k: Option<usize>,
}

struct Slot {
    busy: AtomicBool,
    session: Mutex<Session>,
}

/// Shared state behind the router.
#[derive(Default)]
pub struct AppState {
    sessions: Mutex<HashMap<u64, Arc<Slot>>>,
    next_id: AtomicU64,
}

pub fn router() -> Router {
    router_with_state(Arc::new(AppState::default()))
}

pub fn router_with_state(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/slice", get(slice_png))
        .route("/sessions/{id}/params", put(set_params))
        .route("/sessions/{id}/seeds", post(solve_seeds))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router()).await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn not_found(id: u64) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id}"))
}

fn core_status(e: &CoreError) -> StatusCode {
    match e {
        CoreError::InvalidParam(_)
        | CoreError::Index { .. }
        | CoreError::DimsMismatch { .. }
        | CoreError::SingularSystem
        | CoreError::InsufficientBasis { .. }
        | CoreError::ImageMismatch => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        Self(core_status(&e), e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(c) => c.into(),
            other => Self(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct PhantomRequest {
    pub kind: String,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Deserialize)]
pub struct PrecomputeRequest {
    pub betas: Vec<f64>,
    pub m: usize,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
}

fn default_eig_tol() -> f64 {
    1e-6
}

/// Either `image` (a server-side path) or `phantom`; packs are paths or are
/// computed on the spot from `precompute`.
#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub phantom: Option<PhantomRequest>,
    #[serde(default)]
    pub packs: Vec<PathBuf>,
    #[serde(default)]
    pub precompute: Option<PrecomputeRequest>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct CreateResponse {
    id: u64,
    dims: Vec<usize>,
    k: Option<usize>,
    betas: Vec<f64>,
    beta: f64,
}

fn build_session(req: CreateRequest) -> ApiResult<Session> {
    let bad = |m: String| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m);
    let image: Image = match (&req.image, &req.phantom) {
        (Some(path), None) => load_image(path)?,
        (None, Some(p)) => {
            let kind = PhantomKind::parse(&p.kind).ok_or_else(|| bad(format!("unknown phantom {:?}", p.kind)))?;
            make_phantom(kind, &p.dims, p.seed, p.noise)?.image
        }
        _ => return Err(bad("give exactly one of image or phantom".into())),
    };
    let mut packs: Vec<SpectralPack> = req.packs.iter().map(|p| load_pack(p)).collect::<Result<_, _>>()?;
    if let Some(pre) = &req.precompute {
        for &beta in &pre.betas {
            packs.push(precompute(&image, beta, pre.m.min(image.len()), pre.eig_tol)?);
        }
    }
    if packs.is_empty() {
        return Err(bad("a session needs packs or a precompute request".into()));
    }
    let segmenter = Segmenter::new(image, PackSet::new(packs)?)?;
    Ok(Session { segmenter, params: Params::default(), k: req.k })
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateRequest>) -> ApiResult<Response> {
    let session = tokio::task::spawn_blocking(move || build_session(req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let resp = CreateResponse {
        id: 0,
        dims: session.segmenter.image().dims().to_vec(),
        k: session.k,
        betas: session.segmenter.packs().betas(),
        beta: session.segmenter.beta(),
    };
    let id = state.next_id.fetch_add(1, Ordering::SeqCst) + 1;
    let slot = Arc::new(Slot { busy: AtomicBool::new(false), session: Mutex::new(session) });
    state.sessions.lock().unwrap().insert(id, slot);
    Ok((StatusCode::CREATED, Json(CreateResponse { id, ..resp })).into_response())
}

fn slot(state: &AppState, id: u64) -> ApiResult<Arc<Slot>> {
    state.sessions.lock().unwrap().get(&id).cloned().ok_or_else(|| not_found(id))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    match state.sessions.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(id)),
    }
}

#[derive(Debug, Deserialize)]
pub struct SliceQuery {
    #[serde(default)]
    pub axis: Option<usize>,
    #[serde(default)]
    pub index: Option<usize>,
}

/// Grayscale slice perpendicular to `axis` (default: the last axis).
pub fn slice_pixels(image: &Image, axis: usize, index: usize) -> Option<(u32, u32, Vec<u8>)> {
    let dims = image.dims();
    let grid = image.grid();
    let d = dims.len();
    if axis >= d.max(3) || (axis < d && index >= dims[axis]) || (axis >= d && index != 0) {
        return None;
    }
    let plane: Vec<usize> = (0..d).filter(|&a| a != axis).take(2).collect();
    let (u, v) = (plane[0], plane.get(1).copied());
    let (w, h) = (dims[u], v.map_or(1, |v| dims[v]));
    let mut px = Vec::with_capacity(w * h);
    let mut coords = [0usize; 3];
    if axis < d {
        coords[axis] = index;
    }
    for j in 0..h {
        for i in 0..w {
            coords[u] = i;
            if let Some(v) = v {
                coords[v] = j;
            }
            let x = grid.index(&coords[..d]);
            px.push((image.data()[x] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Some((w as u32, h as u32, px))
}

pub fn encode_png(w: u32, h: u32, px: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(px).expect("in-memory PNG data");
    }
    out
}

async fn slice_png(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let slot = slot(&state, id)?;
    let session = slot.session.lock().unwrap();
    let image = session.segmenter.image();
    // Axis 2 gives z slices of a volume and the whole plane of a 2D image.
    let axis = q.axis.unwrap_or(2);
    let index = q.index.unwrap_or(0);
    let (w, h, px) = slice_pixels(image, axis, index)
        .ok_or_else(|| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("no slice {index} on axis {axis}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], encode_png(w, h, &px)).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct ParamsRequest {
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub m_use: Option<usize>,
    pub adaptive: Option<bool>,
    pub k: Option<usize>,
}

/// Marks a session busy for the lifetime of the guard.
struct BusyGuard(Arc<Slot>);

impl BusyGuard {
    fn acquire(slot: Arc<Slot>) -> ApiResult<Self> {
        if slot.busy.swap(true, Ordering::SeqCst) {
            return Err(ApiError(StatusCode::CONFLICT, "a solve is already running for this session".into()));
        }
        Ok(Self(slot))
    }
}

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

async fn set_params(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(req): Json<ParamsRequest>,
) -> ApiResult<Json<serde_json::Value>> {
    let guard = BusyGuard::acquire(slot(&state, id)?)?;
    let out = tokio::task::spawn_blocking(move || -> ApiResult<serde_json::Value> {
        let mut s = guard.0.session.lock().unwrap();
        let bad = |m: &str| ApiError(StatusCode::UNPROCESSABLE_ENTITY, m.into());
        if let Some(g) = req.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(bad("gamma must be finite and >= 0"));
            }
            s.params.gamma = g;
        }
        if let Some(e) = req.epsilon {
            if !(e > 0.0) {
                return Err(bad("epsilon must be positive"));
            }
            s.params.epsilon = e;
        }
        if let Some(a) = req.adaptive {
            s.params.adaptive = a;
        }
        if req.m_use.is_some() {
            s.params.m_use = req.m_use;
        }
        if req.k.is_some() {
            s.k = req.k;
        }
        let refreshed = match req.beta {
            Some(b) => s.segmenter.set_beta(b)?,
            None => false,
        };
        Ok(json!({
            "gamma": s.params.gamma,
            "epsilon": s.params.epsilon,
            "beta": s.segmenter.beta(),
            "base_beta": s.segmenter.base_beta(),
            "refreshed": refreshed || s.segmenter.is_refreshed(),
            "m_use": s.params.m_use,
            "adaptive": s.params.adaptive,
        }))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SeedsRequest {
    Wrapped { seeds: Vec<Seed>, #[serde(default)] k: Option<usize> },
    Bare(Vec<Seed>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedsResponse {
    pub dims: Vec<usize>,
    pub k: usize,
    /// `[label, run length]` pairs over voxels in index order.
    pub labels_rle: Vec<[u32; 2]>,
    /// Base64 of one byte per voxel, `round(255 (1 - max_k U))`.
    pub uncertainty: String,
    pub m_use: usize,
    pub online_ms: f64,
    pub refreshed: bool,
    pub base_beta: f64,
    pub beta: f64,
    pub adaptive_converged: Option<bool>,
}

pub fn rle(labels: &[u16]) -> Vec<[u32; 2]> {
    let mut out: Vec<[u32; 2]> = Vec::new();
    for &l in labels {
        match out.last_mut() {
            Some(run) if run[0] == u32::from(l) => run[1] += 1,
            _ => out.push([u32::from(l), 1]),
        }
    }
    out
}

pub fn unrle(runs: &[[u32; 2]]) -> Vec<u16> {
    runs.iter().flat_map(|r| std::iter::repeat(r[0] as u16).take(r[1] as usize)).collect()
}

async fn solve_seeds(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(req): Json<SeedsRequest>,
) -> ApiResult<Json<SeedsResponse>> {
    let guard = BusyGuard::acquire(slot(&state, id)?)?;
    let (seeds, k_req) = match req {
        SeedsRequest::Wrapped { seeds, k } => (seeds, k),
        SeedsRequest::Bare(seeds) => (seeds, None),
    };
    let resp = tokio::task::spawn_blocking(move || -> ApiResult<SeedsResponse> {
        let s = guard.0.session.lock().unwrap();
        let pairs: Vec<(usize, usize)> = seeds.iter().map(|s| (s.index, s.label)).collect();
        let k = k_req.or(s.k);
        let prob = s.segmenter.problem(&pairs, k, s.params.gamma)?;
        let size = match s.params.m_use {
            Some(m) => BasisSize::Fixed(m),
            None if s.params.adaptive => BasisSize::Adaptive(AdaptivePolicy::with_epsilon(s.params.epsilon)),
            None => BasisSize::All,
        };
        let out = s.segmenter.solve(&prob, &size)?;
        let uncertainty: Vec<u8> = (0..out.field.len())
            .map(|x| {
                let max = out.field.row(x).iter().cloned().fold(0.0, f64::max);
                (255.0 * (1.0 - max)).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Ok(SeedsResponse {
            dims: out.labels.dims().to_vec(),
            k: prob.k(),
            labels_rle: rle(out.labels.labels()),
            uncertainty: base64::engine::general_purpose::STANDARD.encode(uncertainty),
            m_use: out.report.m_use,
            online_ms: out.report.online_ms,
            refreshed: out.report.refreshed,
            base_beta: out.report.base_beta,
            beta: out.report.beta,
            adaptive_converged: out.report.adaptive_converged,
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}
