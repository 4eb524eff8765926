//! Read-only JSON API over one loaded bundle.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use regkg_core::retrieval::{Answer, Engine, Outcome, RetrievalConfig, RetrievalError};
use regkg_core::section_id::{Depth, SectionId};
use regkg_core::store::Manifest;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::commands::Session;
use crate::config::{ServiceConfig, API_KEY_HEADER};
use crate::error::CliError;

pub struct AppState {
    pub session: Session,
    pub retrieval: RetrievalConfig,
    pub manifest: Manifest,
    pub timeout: Duration,
    pub api_key: Option<String>,
    cache: Option<Mutex<LruCache<String, Answer>>>,
}

impl AppState {
    pub fn new(
        session: Session,
        retrieval: RetrievalConfig,
        timeout: Duration,
        api_key: Option<String>,
        cache_size: usize,
    ) -> AppState {
        let manifest = session.bundle.manifest();
        AppState {
            session,
            retrieval,
            manifest,
            timeout,
            api_key: api_key.filter(|k| !k.is_empty()),
            cache: NonZeroUsize::new(cache_size).map(|n| Mutex::new(LruCache::new(n))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>, stage: Option<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
            stage,
        }),
    )
        .into_response()
}

#[derive(Deserialize)]
struct QueryRequest {
    question: String,
}

#[derive(Deserialize)]
struct QueryParams {
    trace: Option<String>,
}

async fn query(
    State(state): State<Arc<AppState>>,
    Query(params): Query<QueryParams>,
    body: Bytes,
) -> Response {
    let trace = matches!(params.trace.as_deref(), Some("1" | "true"));
    let question = match serde_json::from_slice::<QueryRequest>(&body) {
        Ok(r) if !r.question.trim().is_empty() => r.question.trim().to_string(),
        Ok(_) => return error(StatusCode::BAD_REQUEST, "question is empty", None),
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                format!("expected {{\"question\": string}}: {e}"),
                None,
            )
        }
    };

    let cached = state
        .cache
        .as_ref()
        .and_then(|c| c.lock().expect("cache lock").get(&question).cloned());
    let answer = match cached {
        Some(a) => a,
        None => {
            let worker = Arc::clone(&state);
            let q = question.clone();
            let task = tokio::task::spawn_blocking(move || {
                Engine::new(
                    &worker.session.bundle,
                    &worker.session.gateway,
                    worker.retrieval.clone(),
                )
                .answer_question(&q)
            });
            let answer = match tokio::time::timeout(state.timeout, task).await {
                Err(_) => {
                    return error(
                        StatusCode::GATEWAY_TIMEOUT,
                        format!("no answer within {:?}", state.timeout),
                        Some("query".into()),
                    )
                }
                Ok(Err(join)) => {
                    return error(StatusCode::INTERNAL_SERVER_ERROR, join.to_string(), None)
                }
                Ok(Ok(Err(e))) => {
                    let stage = e.stage().map(|s| s.to_string());
                    let status = match e {
                        RetrievalError::EmptyQuestion => StatusCode::BAD_REQUEST,
                        RetrievalError::Llm { .. } => StatusCode::BAD_GATEWAY,
                        RetrievalError::Store { .. } => StatusCode::INTERNAL_SERVER_ERROR,
                    };
                    return error(status, e.to_string(), stage);
                }
                Ok(Ok(Ok(a))) => a,
            };
            if let Some(c) = &state.cache {
                c.lock().expect("cache lock").put(question, answer.clone());
            }
            answer
        }
    };
    let status = match answer.outcome {
        Outcome::EmptyDecomposition => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::OK,
    };
    let answer = if trace {
        answer
    } else {
        answer.without_trace()
    };
    (status, Json(answer)).into_response()
}

async fn section(State(state): State<Arc<AppState>>, Path(raw): Path<String>) -> Response {
    let id = match SectionId::parse_with(&raw, Depth::Extended) {
        Ok(id) => id,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
    };
    match state.session.bundle.section(&id) {
        Some(node) => Json(node).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no section {id}"), None),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({"status": "ok", "manifest": state.manifest})).into_response()
}

async fn require_key(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Response {
    if let Some(key) = &state.api_key {
        let given = request
            .headers()
            .get(API_KEY_HEADER)
            .and_then(|v| v.to_str().ok());
        if given != Some(key.as_str()) {
            return error(
                StatusCode::UNAUTHORIZED,
                format!("missing or wrong {API_KEY_HEADER} header"),
                None,
            );
        }
    }
    next.run(request).await
}

fn cors(origins: &[String]) -> Result<Option<CorsLayer>, CliError> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let list = origins
            .iter()
            .map(|o| {
                HeaderValue::from_str(o)
                    .map_err(|_| CliError::Config(format!("bad CORS origin {o:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        AllowOrigin::list(list)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers(Any),
    ))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Result<Router, CliError> {
    let guarded = Router::new()
        .route("/query", post(query))
        .route("/sections/{id}", get(section))
        .route_layer(middleware::from_fn_with_state(
            Arc::clone(&state),
            require_key,
        ));
    let app = Router::new()
        .route("/health", get(health))
        .merge(guarded)
        .with_state(state);
    Ok(match cors(cors_origins)? {
        Some(layer) => app.layer(layer),
        None => app,
    })
}

/// Serves until ctrl-c, then lets in-flight requests finish.
pub async fn serve(state: Arc<AppState>, config: &ServiceConfig) -> Result<(), CliError> {
    let app = router(state, &config.cors_origins)?;
    let addr = format!("{}:{}", config.bind, config.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| CliError::Serve(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {addr}");
    eprintln!(
        "listening on http://{}",
        listener
            .local_addr()
            .map_err(|e| CliError::Serve(e.to_string()))?
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(|e| CliError::Serve(e.to_string()))
}
