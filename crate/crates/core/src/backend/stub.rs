//! A local chat-completions server for tests and demos. It either answers
//! through a [`ChatBackend`] (typically a [`super::ScriptedBackend`]) or
//! returns a canned body, and records every request body it receives.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use super::{wire, ChatBackend};

#[derive(Clone)]
pub enum StubBehavior {
    Backend(Arc<dyn ChatBackend>),
    Canned { status: u16, body: String },
}

#[derive(Clone)]
struct StubState {
    behavior: StubBehavior,
    captured: Arc<Mutex<Vec<Value>>>,
}

pub struct StubUpstream {
    addr: SocketAddr,
    captured: Arc<Mutex<Vec<Value>>>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl StubUpstream {
    /// Binds 127.0.0.1 on an ephemeral port and serves until dropped.
    pub async fn spawn(behavior: StubBehavior) -> std::io::Result<Self> {
        let captured = Arc::new(Mutex::new(Vec::new()));
        let state = StubState {
            behavior,
            captured: captured.clone(),
        };
        let app = Router::new()
            .route("/chat/completions", post(handle))
            .route("/v1/chat/completions", post(handle))
            .with_state(state);
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            captured,
            shutdown: Some(tx),
        })
    }

    pub async fn backend(backend: Arc<dyn ChatBackend>) -> std::io::Result<Self> {
        Self::spawn(StubBehavior::Backend(backend)).await
    }

    pub async fn canned(status: u16, body: impl Into<String>) -> std::io::Result<Self> {
        Self::spawn(StubBehavior::Canned {
            status,
            body: body.into(),
        })
        .await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL without the `/chat/completions` suffix.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Every request body received so far, in arrival order.
    pub fn captured(&self) -> Vec<Value> {
        self.captured.lock().expect("capture lock").clone()
    }
}

impl Drop for StubUpstream {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn handle(State(state): State<StubState>, body: Bytes) -> Response {
    let request: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => {
            return (
                StatusCode::BAD_REQUEST,
                axum::Json(json!({"error": {"message": e.to_string()}})),
            )
                .into_response()
        }
    };
    state.captured.lock().expect("capture lock").push(request.clone());

    match &state.behavior {
        StubBehavior::Canned { status, body } => (
            StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            [(header::CONTENT_TYPE, "application/json")],
            body.clone(),
        )
            .into_response(),
        StubBehavior::Backend(backend) => {
            let messages = match wire::parse_messages(request.get("messages").unwrap_or(&Value::Null)) {
                Ok(m) => m,
                Err(e) => {
                    return (StatusCode::BAD_REQUEST, axum::Json(json!({"error": {"message": e}}))).into_response()
                }
            };
            let model = request.get("model").and_then(Value::as_str).unwrap_or("stub");
            match backend.complete(&messages).await {
                Ok(content) => axum::Json(wire::completion_body(model, &content)).into_response(),
                Err(e) => (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    axum::Json(json!({"error": {"message": e.to_string()}})),
                )
                    .into_response(),
            }
        }
    }
}
