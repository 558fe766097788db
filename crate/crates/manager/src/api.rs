//! HTTP API consumed by agents, the web console and the CLI.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use soc_core::package::{self, PackageSize};
use soc_core::wire::{ActiveResponseRequest, ApiError, Enrollment, NewTicket, TicketStatus};
use tokio::sync::oneshot;

use crate::alerts::AlertFilter;
use crate::error::ManagerError;
use crate::service::Manager;

type Shared = State<Arc<Manager>>;

impl IntoResponse for ManagerError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ApiError { error: self.kind().to_string(), message: self.to_string() })).into_response()
    }
}

async fn blocking<T, F>(task: F) -> Response
where
    T: IntoResponse + Send + 'static,
    F: FnOnce() -> Result<T, ManagerError> + Send + 'static,
{
    match tokio::task::spawn_blocking(task).await {
        Ok(Ok(value)) => value.into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ManagerError::Storage(io::Error::other(e.to_string())).into_response(),
    }
}

fn json<T: Serialize>(value: T) -> Json<T> {
    Json(value)
}

fn zip_body(bytes: Vec<u8>, filename: &str) -> Response {
    (
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{filename}\"")),
        ],
        bytes,
    )
        .into_response()
}

async fn list_plugins(State(m): Shared) -> Response {
    blocking(move || Ok(json(m.list_plugins()))).await
}

async fn import_plugin(State(m): Shared, body: Bytes) -> Response {
    blocking(move || m.import_plugin(&body).map(|meta| (StatusCode::CREATED, json(meta)))).await
}

async fn get_plugin_file(State(m): Shared, Path(file): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    blocking(move || {
        if file == "template-plugin.zip" {
            return Ok(zip_body(m.template(), &file));
        }
        if let Some(id) = file.strip_suffix(".zip") {
            let size = match q.get("size") {
                None => PackageSize::Full,
                Some(raw) => PackageSize::parse(raw)
                    .ok_or_else(|| ManagerError::BadRequest(format!("size must be full or minimal, got `{raw}`")))?,
            };
            let bytes = m.export_plugin(id, size)?;
            return Ok(zip_body(bytes, &file));
        }
        if let Some(id) = file.strip_suffix(".json") {
            return Ok(json(m.get_metadata(id)?).into_response());
        }
        Err(ManagerError::UnknownPlugin(file))
    })
    .await
}

async fn update_plugin_metadata(State(m): Shared, Path(file): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let id = file.strip_suffix(".json").ok_or_else(|| ManagerError::UnknownPlugin(file.clone()))?;
        let text = std::str::from_utf8(&body).map_err(|_| ManagerError::BadRequest("body is not UTF-8".into()))?;
        let meta = package::parse_metadata(text)?;
        let (meta, _) = m.update_metadata(id, meta)?;
        Ok(json(meta))
    })
    .await
}

async fn delete_plugin(State(m): Shared, Path(id): Path<String>) -> Response {
    blocking(move || m.delete_plugin(&id).map(|()| StatusCode::NO_CONTENT)).await
}

async fn active_response(State(m): Shared, Path(id): Path<String>, body: Bytes) -> Response {
    blocking(move || {
        let request: ActiveResponseRequest =
            serde_json::from_slice(&body).map_err(|e| ManagerError::BadRequest(e.to_string()))?;
        m.active_response(&id, request).map(json)
    })
    .await
}

async fn flag_file(State(m): Shared, Path(file): Path<String>) -> Response {
    blocking(move || {
        let agent = file.strip_suffix(".json").ok_or_else(|| ManagerError::UnknownAgent(file.clone()))?;
        m.flag_file(agent).map(json)
    })
    .await
}

async fn list_alerts(State(m): Shared, Query(q): Query<HashMap<String, String>>) -> Response {
    blocking(move || {
        let filter = AlertFilter::from_query(&q)?;
        Ok(json(m.alerts(&filter)))
    })
    .await
}

async fn create_ticket(State(m): Shared, body: Bytes) -> Response {
    blocking(move || {
        let request: NewTicket = serde_json::from_slice(&body).map_err(|e| ManagerError::BadRequest(e.to_string()))?;
        m.create_ticket(request).map(|t| (StatusCode::CREATED, json(t)))
    })
    .await
}

async fn list_tickets(State(m): Shared, Query(q): Query<HashMap<String, String>>) -> Response {
    blocking(move || {
        let mut status = None;
        for (key, value) in &q {
            match (key.as_str(), value.as_str()) {
                ("status", "open") => status = Some(TicketStatus::Open),
                ("status", "closed") => status = Some(TicketStatus::Closed),
                ("status", other) => return Err(ManagerError::BadFilter(format!("unknown status `{other}`"))),
                (other, _) => return Err(ManagerError::BadFilter(format!("unknown parameter `{other}`"))),
            }
        }
        Ok(json(m.tickets(status)))
    })
    .await
}

async fn close_ticket(State(m): Shared, Path(id): Path<String>) -> Response {
    blocking(move || {
        let id: u64 = id.parse().map_err(|_| ManagerError::UnknownTicket(0))?;
        m.close_ticket(id).map(json)
    })
    .await
}

async fn health(State(m): Shared) -> Response {
    blocking(move || Ok(json(m.health()))).await
}

async fn enroll(State(m): Shared, body: Bytes) -> Response {
    blocking(move || {
        let request: Enrollment = serde_json::from_slice(&body).map_err(|e| ManagerError::BadRequest(e.to_string()))?;
        m.enroll(request).map(|a| (StatusCode::CREATED, json(a)))
    })
    .await
}

async fn list_agents(State(m): Shared) -> Response {
    blocking(move || Ok(json(m.agents()))).await
}

pub fn router(manager: Arc<Manager>) -> Router {
    Router::new()
        .route("/plugins", get(list_plugins).post(import_plugin))
        .route("/plugins/", get(list_plugins).post(import_plugin))
        .route("/plugins/{file}", get(get_plugin_file).post(update_plugin_metadata).delete(delete_plugin))
        .route("/plugins/{id}/ar", post(active_response))
        .route("/shared/{file}", get(flag_file))
        .route("/alerts", get(list_alerts))
        .route("/tickets", get(list_tickets).post(create_ticket))
        .route("/tickets/{id}/close", post(close_ticket))
        .route("/health", get(health))
        .route("/agents", get(list_agents).post(enroll))
        .layer(axum::extract::DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(manager)
}

/// The API served on a background runtime; dropped servers stop serving.
pub struct ApiServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ApiServer {
    pub fn spawn(manager: Arc<Manager>, addr: &str) -> io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = thread::Builder::new().name("api".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("api listener: {e}");
                        return;
                    }
                };
                let served = axum::serve(listener, router(manager)).with_graceful_shutdown(async {
                    let _ = stopped.await;
                });
                if let Err(e) = served.await {
                    log::error!("api server: {e}");
                }
            });
        })?;
        Ok(Self { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the server exits (it only exits when stopped).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
