//! HTTP binding of the engine operations.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::engine::{Engine, Op};
use crate::error::ApiError;

/// Route path and method for an operation.
pub fn route_of(op: Op) -> (&'static str, &'static str) {
    match op {
        Op::Ingest => ("POST", "/ingest"),
        Op::Lookup => ("POST", "/lookup"),
        Op::Retrieve => ("POST", "/retrieve"),
        Op::Delete => ("DELETE", "/triplets"),
        Op::Stats => ("GET", "/stats"),
        Op::TrieNext => ("POST", "/trie/next"),
        Op::Mask => ("POST", "/mask"),
        Op::Ppl => ("POST", "/ppl"),
        Op::Generate => ("POST", "/generate"),
        Op::SnapshotSave => ("POST", "/snapshot/save"),
        Op::SnapshotLoad => ("POST", "/snapshot/load"),
    }
}

fn json_response(status: u16, value: &Value) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = serde_json::to_vec(value).unwrap_or_default();
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error_response(e: &ApiError) -> Response {
    json_response(e.status, &e.body())
}

async fn respond(engine: Arc<Engine>, op: Op, body: Result<Bytes, BytesRejection>) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(r) => {
            let status = r.status().as_u16();
            let code = if status == 413 {
                "payload_too_large"
            } else {
                "invalid_body"
            };
            return error_response(&ApiError::new(status, code, r.body_text()));
        }
    };
    let result = tokio::task::spawn_blocking(move || engine.dispatch(op, &body)).await;
    match result {
        Ok(Ok(v)) => json_response(200, &v),
        Ok(Err(e)) => error_response(&e),
        Err(e) => error_response(&ApiError::new(500, "internal", e.to_string())),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    let limit = engine.config().max_body_bytes;
    let mut router = Router::new();
    for op in Op::ALL {
        let (method, path) = route_of(op);
        let handler = move |State(e): State<Arc<Engine>>, body: Result<Bytes, BytesRejection>| respond(e, op, body);
        router = router.route(
            path,
            match method {
                "GET" => get(handler),
                "DELETE" => delete(handler),
                _ => post(handler),
            },
        );
    }
    router
        .fallback(|| async { error_response(&ApiError::not_found("no such endpoint")) })
        .method_not_allowed_fallback(|| async {
            error_response(&ApiError::new(
                405,
                "method_not_allowed",
                "method not allowed for this endpoint",
            ))
        })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(engine)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    engine: Arc<Engine>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl RunningServer {
    /// Bind `addr` (port 0 picks a free port) and serve in the background.
    pub fn start(engine: Arc<Engine>, addr: SocketAddr) -> io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(engine, listener, async {
                let _ = rx.await;
            }))
        });
        Ok(RunningServer {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.halt()
    }

    fn halt(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}
