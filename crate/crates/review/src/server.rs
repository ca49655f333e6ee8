//! HTTP API.
//!
//! Raters authenticate with the bearer key issued in the plan. Nothing sent
//! to a rater names a contour set; error bodies stay generic for the same
//! reason and details go to stderr.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use hnlevels_core::{read_image, read_labels, ImageVolume, LabelVolume, LevelSchema};

use crate::export::export_csv;
use crate::plan::{resolve, Assignment, ReviewPlan};
use crate::render::{color_hex, encode_png, level_color, render_slice, Plane, Window};
use crate::store::{validate_score, RatingRecord, RatingStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("plan schema {plan:?} does not match loaded schema {schema:?}")]
    SchemaMismatch { plan: String, schema: String },
    #[error("plan levels differ from schema levels")]
    LevelMismatch,
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub struct ReviewService {
    plan: ReviewPlan,
    schema: LevelSchema,
    root: Option<PathBuf>,
    store: RatingStore,
    images: RwLock<HashMap<PathBuf, Arc<ImageVolume>>>,
    labels: RwLock<HashMap<PathBuf, Arc<LabelVolume>>>,
}

struct ApiError(StatusCode, String);

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn internal(detail: impl std::fmt::Display) -> ApiError {
    eprintln!("review service: {detail}");
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn get_or_load<T>(
    cache: &RwLock<HashMap<PathBuf, Arc<T>>>,
    path: &Path,
    load: impl FnOnce(&Path) -> Result<T, hnlevels_core::NiftiError>,
) -> Result<Arc<T>, hnlevels_core::NiftiError> {
    if let Some(v) = cache.read().unwrap_or_else(|p| p.into_inner()).get(path) {
        return Ok(v.clone());
    }
    let v = Arc::new(load(path)?);
    cache
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(path.to_path_buf(), v.clone());
    Ok(v)
}

impl ReviewService {
    pub fn new(
        plan: ReviewPlan,
        schema: LevelSchema,
        root: Option<PathBuf>,
        log_path: &Path,
    ) -> Result<Self, ServiceError> {
        if plan.schema_id != schema.id() {
            return Err(ServiceError::SchemaMismatch {
                plan: plan.schema_id.clone(),
                schema: schema.id().to_string(),
            });
        }
        let ids: Vec<u8> = schema.levels().iter().map(|l| l.id).collect();
        if ids != plan.levels {
            return Err(ServiceError::LevelMismatch);
        }
        Ok(Self {
            store: RatingStore::open(log_path)?,
            plan,
            schema,
            root,
            images: RwLock::default(),
            labels: RwLock::default(),
        })
    }

    pub fn plan(&self) -> &ReviewPlan {
        &self.plan
    }

    pub fn store(&self) -> &RatingStore {
        &self.store
    }

    fn authorize_rater(&self, headers: &HeaderMap, rater: &str) -> ApiResult<()> {
        let key = bearer(headers).ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer key"))?;
        match self.plan.rater(rater) {
            Some(r) if r.key == key => Ok(()),
            _ => Err(ApiError::new(StatusCode::FORBIDDEN, "key does not match rater")),
        }
    }

    fn rater_from_key(&self, headers: &HeaderMap) -> ApiResult<String> {
        let key = bearer(headers).ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer key"))?;
        self.plan
            .rater_for_key(key)
            .map(|r| r.id.clone())
            .ok_or_else(|| ApiError::new(StatusCode::FORBIDDEN, "unknown key"))
    }

    fn assignment_for(&self, rater: &str, token: &str) -> ApiResult<&Assignment> {
        match self.plan.assignments.get(token) {
            Some(a) if a.rater == rater => Ok(a),
            _ => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown token")),
        }
    }

    fn is_complete(&self, rater: &str, token: &str) -> bool {
        self.store.rated_levels(rater, token).len() >= self.plan.levels.len()
    }

    fn image_for(&self, a: &Assignment) -> ApiResult<Arc<ImageVolume>> {
        let case = self.plan.case(&a.case).ok_or_else(|| internal("assignment case missing"))?;
        let path = resolve(self.root.as_deref(), &case.image);
        get_or_load(&self.images, &path, |p| read_image(p)).map_err(internal)
    }

    fn labels_for(&self, a: &Assignment) -> ApiResult<Arc<LabelVolume>> {
        let case = self.plan.case(&a.case).ok_or_else(|| internal("assignment case missing"))?;
        let rel = case.sets.get(&a.set).ok_or_else(|| internal("assignment set missing"))?;
        let path = resolve(self.root.as_deref(), rel);
        get_or_load(&self.labels, &path, |p| read_labels(p)).map_err(internal)
    }

    fn next(&self, rater: &str) -> ApiResult<Value> {
        let seq = &self.plan.sequences[rater];
        let done = seq.iter().filter(|t| self.is_complete(rater, t)).count();
        let Some((pos, token)) = seq.iter().enumerate().find(|(_, t)| !self.is_complete(rater, t)) else {
            return Ok(json!({ "status": "complete", "completed": done, "total": seq.len() }));
        };
        let a = &self.plan.assignments[token];
        let image = self.image_for(a)?;
        let dims = image.dims();
        let levels: Vec<Value> = self
            .schema
            .levels()
            .iter()
            .map(|l| json!({ "id": l.id, "name": l.name, "color": color_hex(level_color(l.id)) }))
            .collect();
        Ok(json!({
            "status": "assignment",
            "token": token,
            "position": pos + 1,
            "completed": done,
            "total": seq.len(),
            "dims": dims,
            "spacing_mm": image.grid().spacing_mm,
            "slices": {
                "axial": Plane::Axial.slice_count(dims),
                "coronal": Plane::Coronal.slice_count(dims),
                "sagittal": Plane::Sagittal.slice_count(dims),
            },
            "levels": levels,
            "rated_levels": self.store.rated_levels(rater, token),
        }))
    }

    fn progress(&self, rater: &str) -> Value {
        let seq = &self.plan.sequences[rater];
        let done = seq.iter().filter(|t| self.is_complete(rater, t)).count();
        let ratings: usize = seq.iter().map(|t| self.store.rated_levels(rater, t).len()).sum();
        json!({
            "completed": done,
            "total": seq.len(),
            "ratings": ratings,
            "expected_ratings": seq.len() * self.plan.levels.len(),
        })
    }
}

#[derive(Deserialize)]
struct RenderQuery {
    token: String,
    plane: Plane,
    index: usize,
    wc: Option<f64>,
    ww: Option<f64>,
}

#[derive(Deserialize)]
struct RatingBody {
    #[serde(default)]
    rater: Option<String>,
    token: String,
    level: u8,
    score: f64,
    #[serde(default)]
    time_on_case_s: Option<f64>,
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    unblind: bool,
}

async fn next_handler(
    State(svc): State<Arc<ReviewService>>,
    UrlPath(rater): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    svc.authorize_rater(&headers, &rater)?;
    let s = svc.clone();
    let v = tokio::task::spawn_blocking(move || s.next(&rater))
        .await
        .map_err(internal)??;
    Ok(Json(v))
}

async fn progress_handler(
    State(svc): State<Arc<ReviewService>>,
    UrlPath(rater): UrlPath<String>,
    headers: HeaderMap,
) -> ApiResult<Json<Value>> {
    svc.authorize_rater(&headers, &rater)?;
    Ok(Json(svc.progress(&rater)))
}

async fn render_handler(
    State(svc): State<Arc<ReviewService>>,
    headers: HeaderMap,
    Query(q): Query<RenderQuery>,
) -> ApiResult<Response> {
    let rater = svc.rater_from_key(&headers)?;
    svc.assignment_for(&rater, &q.token)?;
    let s = svc.clone();
    let png = tokio::task::spawn_blocking(move || -> ApiResult<Vec<u8>> {
        let a = s.assignment_for(&rater, &q.token)?;
        let image = s.image_for(a)?;
        let labels = s.labels_for(a)?;
        let window = Window {
            center: q.wc.unwrap_or(Window::default().center),
            width: q.ww.unwrap_or(Window::default().width),
        };
        let img = render_slice(&image, Some(&labels), &s.schema, q.plane, q.index, window)
            .map_err(|e| match e {
                crate::render::RenderError::DimsMismatch => internal(e),
                other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()),
            })?;
        Ok(encode_png(&img))
    })
    .await
    .map_err(internal)??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn rating_handler(
    State(svc): State<Arc<ReviewService>>,
    headers: HeaderMap,
    Json(body): Json<RatingBody>,
) -> ApiResult<Json<Value>> {
    let rater = svc.rater_from_key(&headers)?;
    if body.rater.as_deref().is_some_and(|r| r != rater) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "key does not match rater"));
    }
    svc.assignment_for(&rater, &body.token)?;
    validate_score(body.score).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if !svc.schema.is_level(body.level) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("level {} is not in the schema", body.level),
        ));
    }
    if body.time_on_case_s.is_some_and(|t| !t.is_finite() || t < 0.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "time_on_case_s must be non-negative"));
    }
    let record = RatingRecord {
        rater: rater.clone(),
        token: body.token.clone(),
        level: body.level,
        score: body.score,
        submitted_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        time_on_case_s: body.time_on_case_s,
    };
    let s = svc.clone();
    tokio::task::spawn_blocking(move || s.store.append(record))
        .await
        .map_err(internal)?
        .map_err(internal)?;
    let rated = svc.store.rated_levels(&rater, &body.token).len();
    Ok(Json(json!({
        "status": "ok",
        "rated_levels": rated,
        "assignment_complete": rated >= svc.plan.levels.len(),
    })))
}

async fn export_handler(
    State(svc): State<Arc<ReviewService>>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    if bearer(&headers) != Some(svc.plan.admin_key.as_str()) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "admin key required"));
    }
    let csv = export_csv(&svc.plan, &svc.schema, &svc.store.effective(), q.unblind).map_err(internal)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

pub fn router(svc: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/session/{rater}/next", get(next_handler))
        .route("/progress/{rater}", get(progress_handler))
        .route("/render", get(render_handler))
        .route("/rating", post(rating_handler))
        .route("/export", get(export_handler))
        .with_state(svc)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    svc: Arc<ReviewService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(shutdown)
        .await
}
