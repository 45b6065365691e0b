use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::Deserialize;
use tower_http::services::ServeDir;
use voxfit_core::Error;

use crate::curves::curves_at;
use crate::session::{slice, Axis, Session};

#[derive(Debug, thiserror::Error)]
pub enum ExplorerError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

pub struct AppState {
    pub session: Session,
    /// Serialized curve bundles keyed by (linear voxel, predictor).
    cache: RwLock<HashMap<(usize, String), Arc<String>>>,
}

impl AppState {
    pub fn new(session: Session) -> Self {
        Self {
            session,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn cached_curves(&self) -> usize {
        self.cache.read().map(|c| c.len()).unwrap_or(0)
    }
}

fn json_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": message.into(), "code": status.as_u16() });
    json_body(status, body.to_string())
}

fn ok<T: serde::Serialize>(value: &T) -> Response {
    match serde_json::to_string(value) {
        Ok(s) => json_body(StatusCode::OK, s),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct SliceQuery {
    axis: Option<String>,
    index: Option<usize>,
    map: Option<usize>,
}

#[derive(Deserialize)]
struct CurveQuery {
    i: Option<usize>,
    j: Option<usize>,
    k: Option<usize>,
    predictor: Option<String>,
}

fn parse_axis(q: &SliceQuery) -> Result<(Axis, usize), Response> {
    let axis = q
        .axis
        .as_deref()
        .and_then(Axis::parse)
        .ok_or_else(|| error(StatusCode::BAD_REQUEST, "axis must be one of x, y, z"))?;
    let index = q
        .index
        .ok_or_else(|| error(StatusCode::BAD_REQUEST, "missing integer 'index'"))?;
    Ok((axis, index))
}

async fn meta(State(state): State<Arc<AppState>>) -> Response {
    ok(&state.session.meta())
}

async fn map_slice(State(state): State<Arc<AppState>>, Query(q): Query<SliceQuery>) -> Response {
    let (axis, index) = match parse_axis(&q) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let which = q.map.unwrap_or(0);
    let Some((name, map)) = state.session.maps.get(which) else {
        return error(
            StatusCode::NOT_FOUND,
            format!("map {which} not found; session has {} maps", state.session.maps.len()),
        );
    };
    let values: Vec<Option<f64>> = map.values.iter().map(|v| v.is_finite().then_some(*v)).collect();
    match slice(&map.geometry, &values, axis, index) {
        Some(s) => ok(&serde_json::json!({
            "map": which,
            "name": name,
            "metric": map.metric,
            "axis": s.axis,
            "index": s.index,
            "shape": s.shape,
            "values": s.values,
        })),
        None => error(StatusCode::NOT_FOUND, format!("index {index} outside axis {}", axis.name())),
    }
}

async fn label_slice(State(state): State<Arc<AppState>>, Query(q): Query<SliceQuery>) -> Response {
    let (axis, index) = match parse_axis(&q) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let Some(labels) = &state.session.labels else {
        return error(StatusCode::NOT_FOUND, "session has no label map");
    };
    match slice(&labels.geometry, &labels.labels, axis, index) {
        Some(s) => ok(&serde_json::json!({
            "legend": labels.legend,
            "metric": labels.metric,
            "axis": s.axis,
            "index": s.index,
            "shape": s.shape,
            "values": s.values,
        })),
        None => error(StatusCode::NOT_FOUND, format!("index {index} outside axis {}", axis.name())),
    }
}

async fn curves(State(state): State<Arc<AppState>>, Query(q): Query<CurveQuery>) -> Response {
    let (Some(i), Some(j), Some(k)) = (q.i, q.j, q.k) else {
        return error(StatusCode::BAD_REQUEST, "curves need integer i, j and k");
    };
    let voxel = [i, j, k];
    if !state.session.geometry.contains(voxel) {
        return error(
            StatusCode::NOT_FOUND,
            format!("voxel {voxel:?} outside volume of dims {:?}", state.session.geometry.dims),
        );
    }
    let key = (state.session.geometry.linear(voxel), q.predictor.clone().unwrap_or_default());
    if let Some(body) = state.cache.read().ok().and_then(|c| c.get(&key).cloned()) {
        return json_body(StatusCode::OK, body.to_string());
    }
    let bundle = match curves_at(&state.session, voxel, q.predictor.as_deref()) {
        Ok(b) => b,
        Err(e @ Error::Name(_)) => return error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let body = match serde_json::to_string(&bundle) {
        Ok(s) => Arc::new(s),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let body = match state.cache.write() {
        Ok(mut c) => c.entry(key).or_insert(body).clone(),
        Err(_) => body,
    };
    json_body(StatusCode::OK, body.to_string())
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "no such endpoint")
}

/// API routes, plus static files from `assets` at `/` when given.
pub fn router(state: Arc<AppState>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/meta", get(meta))
        .route("/api/slice", get(map_slice))
        .route("/api/labels", get(label_slice))
        .route("/api/curves", get(curves))
        .route("/api/{*rest}", get(not_found))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

pub struct Explorer {
    listener: tokio::net::TcpListener,
    app: Router,
    state: Arc<AppState>,
}

/// Binds the listener; fails immediately if the address is unavailable.
pub async fn bind(session: Session, addr: &str, assets: Option<PathBuf>) -> Result<Explorer, ExplorerError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ExplorerError::Bind {
            addr: addr.to_string(),
            source,
        })?;
    let state = Arc::new(AppState::new(session));
    Ok(Explorer {
        listener,
        app: router(state.clone(), assets),
        state,
    })
}

impl Explorer {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    pub async fn serve(self) -> Result<(), ExplorerError> {
        axum::serve(self.listener, self.app).await.map_err(ExplorerError::Serve)
    }

    pub async fn serve_until(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ExplorerError> {
        axum::serve(self.listener, self.app)
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(ExplorerError::Serve)
    }
}
