//! Local HTTP API over a store, for the grader console and scripts.
//!
//! Every response body is JSON. Failures are [`ApiError`] objects.

use std::collections::BTreeMap;
use std::path::PathBuf;

use aiq_core::administration::SessionStatus;
use aiq_core::administration::{Store, StoreError};
use aiq_core::battery::{Ability, Prompt, ScoringMode};
use aiq_core::grading::{classify_grade, CapabilityProfile, GradeResult, GradingError};
use aiq_core::reporting::{latest_per_subject, rank_report, Observation, RankInput, RankTable};
use aiq_core::scoring::{compute_iq, partial_ability_scores, AbilityScores, ScoringError};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            message: message.into(),
            http_status: status.as_u16(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            StoreError::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            StoreError::UnknownSubject(_) => (StatusCode::NOT_FOUND, "UnknownSubject"),
            StoreError::InvalidId(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            StoreError::Scoring(s) => match s {
                ScoringError::UnknownItem(_) => (StatusCode::NOT_FOUND, "UnknownItem"),
                ScoringError::NotPending(_) => (StatusCode::CONFLICT, "NotPending"),
                ScoringError::OutOfRange { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "OutOfRange"),
                _ => (StatusCode::CONFLICT, "SessionIncomplete"),
            },
            StoreError::NotRunnable { .. } => (StatusCode::CONFLICT, "NotRunnable"),
            StoreError::Write { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "StoreWriteError"),
            StoreError::Parse { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "ParseError"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "StoreError"),
        };
        ApiError::new(status, code, message)
    }
}

impl From<GradingError> for ApiError {
    fn from(e: GradingError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ProfileInvalid", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(store: &Store, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(Store) -> Result<T, ApiError> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(store))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

/// The API router. With `assets`, files in that directory are served at `/`.
pub fn router(store: Store, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", get(list_sessions))
        .route("/api/sessions/:id", get(get_session))
        .route("/api/sessions/:id/queue", get(queue))
        .route("/api/sessions/:id/scores", post(post_score))
        .route("/api/reports/rank", get(rank))
        .route("/api/profiles", get(profiles))
        .route("/api/profiles/classify", post(classify))
        .fallback(not_found)
        .with_state(store);
    match assets {
        Some(dir) => Router::new().nest_service("/", ServeDir::new(dir)).merge(api),
        None => api,
    }
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

async fn list_sessions(
    State(store): State<Store>,
) -> ApiResult<Vec<aiq_core::administration::SessionSummary>> {
    blocking(&store, |s| Ok(s.summaries()?)).await.map(Json)
}

async fn get_session(
    State(store): State<Store>,
    Path(id): Path<String>,
) -> ApiResult<aiq_core::administration::Session> {
    blocking(&store, move |s| Ok(s.load_session(&id)?))
        .await
        .map(Json)
}

/// A human-graded item waiting for a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub session_id: String,
    pub subject_ref: String,
    pub subject_name: String,
    pub item_id: String,
    pub subtest_id: String,
    pub ability: Ability,
    pub prompt: Prompt,
    pub response: String,
    pub rubric: String,
    pub max_points: f64,
    pub step: f64,
}

async fn queue(State(store): State<Store>, Path(id): Path<String>) -> ApiResult<Vec<QueueItem>> {
    blocking(&store, move |s| {
        let session = s.load_session(&id)?;
        let battery = s.battery(&session.battery_ref)?;
        let subject_name = s
            .subject(&session.subject_ref)
            .map(|x| x.display_name)
            .unwrap_or_else(|_| session.subject_ref.clone());
        let items = session
            .pending_items(&battery)
            .into_iter()
            .filter_map(|item_id| battery.find_item(item_id))
            .map(|(sub, item)| {
                let (rubric, step) = match &item.scoring {
                    ScoringMode::HumanRubric { rubric, step } => (rubric.clone(), *step),
                    _ => (String::new(), 1.0),
                };
                QueueItem {
                    session_id: session.id.clone(),
                    subject_ref: session.subject_ref.clone(),
                    subject_name: subject_name.clone(),
                    item_id: item.id.clone(),
                    subtest_id: sub.id.clone(),
                    ability: sub.ability,
                    prompt: item.prompt.clone(),
                    response: session
                        .responses
                        .get(&item.id)
                        .map(|r| r.raw_response.clone())
                        .unwrap_or_default(),
                    rubric,
                    max_points: item.max_points,
                    step,
                }
            })
            .collect();
        Ok(items)
    })
    .await
    .map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub item_id: String,
    pub points: f64,
    pub grader_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub session_id: String,
    pub status: SessionStatus,
    pub pending: usize,
    /// Scores of abilities whose items are all scored, keyed by symbol.
    pub ability_scores: BTreeMap<String, f64>,
    /// Two-decimal Q once every ability is scored.
    #[serde(rename = "Q")]
    pub q: Option<f64>,
}

async fn post_score(
    State(store): State<Store>,
    Path(id): Path<String>,
    body: Result<Json<ScoreRequest>, JsonRejection>,
) -> ApiResult<ScoreResponse> {
    let Json(req) = body?;
    if req.grader_id.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "BadRequest",
            "grader_id is required",
        ));
    }
    blocking(&store, move |s| {
        let session = s.record_manual_score(&id, &req.item_id, req.points, &req.grader_id)?;
        let battery = s.battery(&session.battery_ref)?;
        let partial = partial_ability_scores(&session, &battery);
        let q = if partial.len() == Ability::ALL.len() {
            let scores = AbilityScores::from_fn(|a| partial[&a]);
            compute_iq(&scores, &battery.weights).ok().map(|q| q.rounded())
        } else {
            None
        };
        Ok(ScoreResponse {
            session_id: session.id.clone(),
            status: session.status,
            pending: session.pending_items(&battery).len(),
            ability_scores: partial
                .into_iter()
                .map(|(a, v)| (format!("f_{}", a.symbol()), v))
                .collect(),
            q,
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Default, Deserialize)]
pub struct RankQuery {
    /// Restrict to `results/<name>.json`.
    pub results: Option<String>,
    pub as_of: Option<DateTime<Utc>>,
}

/// Rank table of the latest IQ per subject, from recorded values and
/// complete sessions.
pub fn store_rank(store: &Store, query: &RankQuery) -> Result<RankTable, ApiError> {
    let inputs: Vec<RankInput> = match &query.results {
        Some(name) => {
            let rows = store.recorded_results_in(name).map_err(|e| match e {
                StoreError::Read { .. } => {
                    ApiError::new(StatusCode::NOT_FOUND, "UnknownResults", e.to_string())
                }
                other => other.into(),
            })?;
            let obs: Vec<Observation> = rows.iter().map(Observation::from).collect();
            latest_per_subject(&obs, query.as_of)
        }
        None => latest_per_subject(&store.observations()?, query.as_of),
    };
    let as_of = query.as_of.unwrap_or_else(|| store.now());
    rank_report(&inputs, &store.subjects()?, as_of)
        .map_err(|e| ApiError::new(StatusCode::CONFLICT, "DuplicateSubject", e.to_string()))
}

async fn rank(State(store): State<Store>, Query(query): Query<RankQuery>) -> ApiResult<RankTable> {
    blocking(&store, move |s| store_rank(&s, &query)).await.map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedProfile {
    pub name: String,
    pub profile: CapabilityProfile,
}

async fn profiles(State(store): State<Store>) -> ApiResult<Vec<NamedProfile>> {
    blocking(&store, |s| {
        Ok(s.profiles()?
            .into_iter()
            .map(|(name, profile)| NamedProfile { name, profile })
            .collect())
    })
    .await
    .map(Json)
}

#[derive(Debug, Default, Deserialize)]
pub struct ClassifyQuery {
    pub eps: Option<f64>,
}

async fn classify(
    Query(query): Query<ClassifyQuery>,
    body: Result<Json<CapabilityProfile>, JsonRejection>,
) -> ApiResult<GradeResult> {
    let Json(profile) = body?;
    Ok(Json(classify_grade(&profile, query.eps.unwrap_or(0.0))?))
}
