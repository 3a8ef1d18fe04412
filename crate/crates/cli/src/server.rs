//! HTTP routes over an [`Engine`].
//!
//! | method | path                               | body            | success |
//! |--------|------------------------------------|-----------------|---------|
//! | POST   | `/users`                           | `{"user_id"}`   | 201     |
//! | GET    | `/users/{id}/profile`              |                 | 200     |
//! | POST   | `/search`                          | `SearchRequest` | 200     |
//! | GET    | `/documents/{doc}/nodes/{start}`   |                 | 200     |
//! | GET    | `/health`                          |                 | 200     |
//!
//! Errors carry `{"error": "..."}` with status 400, 404, 409 or 422.

use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::config::ServiceConfig;
use crate::service::{Engine, SearchRequest, ServiceError};

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterRequest {
    user_id: String,
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed request body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn register(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ServiceError> {
    let req: RegisterRequest = parse_body(&body)?;
    let export = blocking(move || engine.register(&req.user_id)).await?;
    Ok((StatusCode::CREATED, Json(export)).into_response())
}

async fn profile(State(engine): State<Arc<Engine>>, Path(user): Path<String>) -> Result<Response, ServiceError> {
    let export = blocking(move || engine.profile(&user)).await?;
    Ok(Json(export).into_response())
}

async fn search(State(engine): State<Arc<Engine>>, body: Bytes) -> Result<Response, ServiceError> {
    let req: SearchRequest = parse_body(&body)?;
    let out = blocking(move || engine.search(&req)).await?;
    Ok(Json(out).into_response())
}

async fn node(
    State(engine): State<Arc<Engine>>,
    Path((doc, start)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    let start: u32 = start
        .parse()
        .map_err(|_| ServiceError::BadRequest(format!("node start `{start}` is not a number")))?;
    Ok(Json(engine.node(&doc, start)?).into_response())
}

async fn health(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.health()).into_response()
}

fn cors(origins: &[String]) -> anyhow::Result<Option<CorsLayer>> {
    if origins.is_empty() {
        return Ok(None);
    }
    let allow = if origins.iter().any(|o| o == "*") {
        AllowOrigin::any()
    } else {
        let values = origins
            .iter()
            .map(|o| HeaderValue::from_str(o).with_context(|| format!("invalid CORS origin `{o}`")))
            .collect::<anyhow::Result<Vec<_>>>()?;
        AllowOrigin::list(values)
    };
    Ok(Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers([header::CONTENT_TYPE]),
    ))
}

pub fn router(engine: Arc<Engine>, cors_origins: &[String]) -> anyhow::Result<Router> {
    let app = Router::new()
        .route("/users", post(register))
        .route("/users/{id}/profile", get(profile))
        .route("/search", post(search))
        .route("/documents/{doc}/nodes/{start}", get(node))
        .route("/health", get(health))
        .with_state(engine);
    Ok(match cors(cors_origins)? {
        Some(layer) => app.layer(layer),
        None => app,
    })
}

/// Binds the configured address and serves until interrupted.
pub fn serve(config: &ServiceConfig) -> anyhow::Result<()> {
    let engine = Arc::new(Engine::open(config)?);
    let app = router(engine, &config.cors_origins)?;
    let addr = config.socket_addr()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
