//! HTTP API over the [`Engine`]. Store and model work runs on the blocking
//! pool; request bodies are parsed by hand so malformed JSON is a 400.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, OnceCell};

use prefmem_core::extraction::{ConversationTranscript, Turn};
use prefmem_core::prefstore::PreferenceId;
use prefmem_core::retrieval::TopK;

use crate::engine::{Engine, EngineError};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

type Cached = Arc<OnceCell<(StatusCode, Value)>>;

pub struct AppState {
    pub engine: Arc<Engine>,
    pub bearer_token: Option<String>,
    pub idempotency_ttl: Duration,
    idempotency: Mutex<HashMap<(String, String), (Instant, Cached)>>,
}

impl AppState {
    pub fn new(engine: Engine, bearer_token: Option<String>, idempotency_ttl: Duration) -> Self {
        Self {
            engine: Arc::new(engine),
            bearer_token,
            idempotency_ttl,
            idempotency: Mutex::new(HashMap::new()),
        }
    }

    async fn idempotency_slot(&self, user: &str, key: &str) -> Cached {
        let mut slots = self.idempotency.lock().await;
        let ttl = self.idempotency_ttl;
        slots.retain(|_, (at, _)| at.elapsed() < ttl);
        slots
            .entry((user.to_string(), key.to_string()))
            .or_insert_with(|| (Instant::now(), Arc::new(OnceCell::new())))
            .1
            .clone()
    }
}

pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, message.into())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::BadRequest(_) => StatusCode::BAD_REQUEST,
            EngineError::Gateway(_) => StatusCode::BAD_GATEWAY,
            EngineError::Conflict(_) => StatusCode::CONFLICT,
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConversationBody {
    pub conversation_id: Option<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveBody {
    pub utterance: String,
    pub k: Option<usize>,
    /// Uses k = the user's preference count in this sub-category.
    pub sub_category: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptOutBody {
    pub sub_categories: Vec<String>,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    taxonomy_version: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        taxonomy_version: state.engine.store.taxonomy().version.clone(),
    })
}

fn conversation_id(body: &ConversationBody) -> String {
    body.conversation_id.clone().unwrap_or_else(|| {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        format!("conv-{nanos:x}")
    })
}

async fn run_conversation(state: &AppState, user: String, body: &Bytes) -> Result<(StatusCode, Value), ApiError> {
    let parsed: ConversationBody = parse_body(body)?;
    let transcript = ConversationTranscript::new(conversation_id(&parsed), parsed.turns);
    let summary = blocking(&state.engine, move |e| e.ingest_conversation(&user, &transcript)).await?;
    let value = serde_json::to_value(&summary).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::OK, value))
}

async fn post_conversation(
    State(state): State<Arc<AppState>>,
    Path(user): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let key = headers
        .get(IDEMPOTENCY_HEADER)
        .map(|v| v.to_str().map(str::to_string))
        .transpose()
        .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?;
    let (status, value) = match key {
        None => run_conversation(&state, user, &body).await?,
        Some(key) => {
            let slot = state.idempotency_slot(&user, &key).await;
            let mut replayed = true;
            let result = slot
                .get_or_try_init(|| {
                    replayed = false;
                    run_conversation(&state, user.clone(), &body)
                })
                .await?
                .clone();
            if replayed {
                tracing::debug!(user, key, "replaying stored conversation response");
            }
            result
        }
    };
    Ok((status, Json(value)).into_response())
}

async fn post_retrieve(State(state): State<Arc<AppState>>, Path(user): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let parsed: RetrieveBody = parse_body(&body)?;
    let k = match (parsed.k, parsed.sub_category) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either k or sub_category")),
        (Some(k), None) => Some(TopK::Fixed(k)),
        (None, Some(sub)) => {
            if state.engine.store.taxonomy().sub(&sub).is_none() {
                return Err(ApiError::bad_request(format!("unknown sub-category {sub:?}")));
            }
            Some(TopK::Dynamic { sub_category: sub })
        }
        (None, None) => None,
    };
    let utterance = parsed.utterance;
    let ranked = blocking(&state.engine, move |e| e.retrieve(&user, &utterance, k)).await?;
    Ok(Json(json!({ "results": ranked })).into_response())
}

async fn get_preferences(State(state): State<Arc<AppState>>, Path(user): Path<String>) -> Result<Response, ApiError> {
    let opted_out = state.engine.store.opted_out(&user);
    let prefs = blocking(&state.engine, move |e| Ok(e.preferences(&user))).await?;
    Ok(Json(json!({ "preferences": prefs, "opted_out": opted_out })).into_response())
}

async fn delete_preference(
    State(state): State<Arc<AppState>>,
    Path((user, pid)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let id: PreferenceId = pid
        .parse()
        .map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("no preference {pid:?}")))?;
    blocking(&state.engine, move |e| e.delete(&user, id)).await?;
    Ok(Json(json!({ "deleted": id })).into_response())
}

async fn post_optout(State(state): State<Arc<AppState>>, Path(user): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let parsed: OptOutBody = parse_body(&body)?;
    let summary = blocking(&state.engine, move |e| e.opt_out(&user, &parsed.sub_categories)).await?;
    Ok(Json(summary).into_response())
}

async fn require_bearer(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.bearer_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/v1/users/{id}/conversations", post(post_conversation))
        .route("/v1/users/{id}/retrieve", post(post_retrieve))
        .route("/v1/users/{id}/preferences", get(get_preferences))
        .route("/v1/users/{id}/preferences/{pid}", delete(delete_preference))
        .route("/v1/users/{id}/optout", post(post_optout))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_bearer));
    Router::new().route("/healthz", get(health)).merge(api).with_state(state)
}
