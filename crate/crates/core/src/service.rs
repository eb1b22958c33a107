//! HTTP service for interactive stylization.
//!
//! | route | |
//! |---|---|
//! | `POST /api/stylize?alpha=R` | body: PNG (or PPM) bytes; reply: PNG |
//! | `GET /api/health` | `{"status":"ok"}` |
//! | `GET /api/model` | architecture, image size, trained strength range, checkpoint CRC |
//!
//! Stylize replies carry `X-Alpha` (the parsed strength), `X-Image-Size`
//! (the side length the upload was resized and cropped to) and
//! `X-Alpha-Extrapolated` (`true` outside `[0, 10]`). Errors are JSON
//! `{"error": ...}`: 400 for a bad strength or image, 413 for bodies above
//! the configured limit.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::{Error, Result};
use crate::inference::{is_extrapolated, parse_alpha, Stylizer};
use crate::strength::ALPHA_MAX;
use crate::trainer::LoadedModel;

pub const DEFAULT_MAX_BODY_BYTES: usize = 8 * 1024 * 1024;

/// Reply of `GET /api/model`.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct ModelInfo {
    pub widths: [usize; 3],
    pub residual_blocks: usize,
    pub image_size: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// CRC32 of the served checkpoint, 8 lowercase hex digits.
    pub checkpoint_crc32: String,
    pub train_seed: Option<u64>,
}

/// Shared, read-only state.
#[derive(Debug)]
pub struct ServiceState {
    pub stylizer: Stylizer,
    pub info: ModelInfo,
}

impl ServiceState {
    pub fn new(model: &LoadedModel, size_override: Option<usize>) -> Result<Self> {
        let stylizer = Stylizer::from_model(model, size_override)?;
        let cfg = model.weights.config();
        let info = ModelInfo {
            widths: cfg.widths,
            residual_blocks: cfg.residual_blocks,
            image_size: stylizer.image_size(),
            alpha_min: 0.0,
            alpha_max: ALPHA_MAX,
            checkpoint_crc32: format!("{:08x}", model.crc),
            train_seed: model.meta.seed,
        };
        Ok(ServiceState { stylizer, info })
    }
}

fn error_reply(status: StatusCode, msg: &str) -> Response {
    (status, Json(json!({ "error": msg }))).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn model_info(State(state): State<Arc<ServiceState>>) -> Json<ModelInfo> {
    Json(state.info.clone())
}

async fn stylize(
    State(state): State<Arc<ServiceState>>,
    Query(query): Query<HashMap<String, String>>,
    body: Bytes,
) -> Response {
    let alpha = match query.get("alpha").map(|s| parse_alpha(s)) {
        Some(Ok(a)) => a,
        _ => return error_reply(StatusCode::BAD_REQUEST, "invalid alpha"),
    };
    let st = Arc::clone(&state);
    let result = tokio::task::spawn_blocking(move || st.stylizer.stylize_bytes(&body, alpha)).await;
    match result {
        Ok(Ok(png)) => {
            let mut resp = png.into_response();
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            h.insert("x-alpha", HeaderValue::from_str(&alpha.to_string()).expect("ascii"));
            h.insert(
                "x-image-size",
                HeaderValue::from_str(&state.stylizer.image_size().to_string()).expect("ascii"),
            );
            h.insert(
                "x-alpha-extrapolated",
                HeaderValue::from_static(if is_extrapolated(alpha) { "true" } else { "false" }),
            );
            resp
        }
        Ok(Err(Error::Image { .. })) => error_reply(StatusCode::BAD_REQUEST, "invalid image"),
        Ok(Err(e)) => error_reply(StatusCode::BAD_REQUEST, &e.to_string()),
        Err(e) => error_reply(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}

pub fn router(state: Arc<ServiceState>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/api/stylize", post(stylize))
        .route("/api/health", get(health))
        .route("/api/model", get(model_info))
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Serve until the process exits.
pub async fn serve(listener: TcpListener, state: Arc<ServiceState>, max_body_bytes: usize) -> Result<()> {
    let addr = listener.local_addr().ok();
    axum::serve(listener, router(state, max_body_bytes))
        .await
        .map_err(|e| Error::Io {
            path: addr.map(|a: SocketAddr| a.to_string()).unwrap_or_default().into(),
            source: e,
        })
}

/// Bind `addr`, returning the listener and the port actually bound.
pub async fn bind(addr: &str) -> Result<(TcpListener, u16)> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr, e))?;
    let port = listener.local_addr().map_err(|e| Error::io(addr, e))?.port();
    Ok((listener, port))
}

/// Start the service on a background runtime thread; returns the bound port.
/// Used by tests and examples that need a live server in-process.
pub fn spawn_background(state: ServiceState, addr: &str, max_body_bytes: usize) -> Result<u16> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    let (listener, port) = rt.block_on(bind(addr))?;
    let state = Arc::new(state);
    std::thread::spawn(move || {
        let _ = rt.block_on(serve(listener, state, max_body_bytes));
    });
    Ok(port)
}
