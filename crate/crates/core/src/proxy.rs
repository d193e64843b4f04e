//! An OpenAI-compatible `/v1/chat/completions` endpoint in front of an
//! upstream that has no native tool calling.
//!
//! Requests carrying `tools` run the full prompt-level loop against the
//! upstream, with tools executed here from the proxy's registry. The final
//! answer comes back as an ordinary assistant message, and the executed calls
//! are listed in a `toolshim_trace` field. Requests without tools are
//! forwarded byte for byte.

use std::collections::HashMap;
use std::future::{Future, IntoFuture};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::agent::{Conversation, ConversationConfig, OutcomeKind, TurnOutcome, DEFAULT_MAX_ITERATIONS};
use crate::backend::{wire, BackendConfig, ChatBackend, HttpBackend};
use crate::extract::{scan_code_fence, scan_tool_invocation};
use crate::promptgen::build_system_prompt;
use crate::registry::Registry;
use crate::schema::{byte_offset, ChatMessage, Role, ToolList};

pub const SESSION_HEADER: &str = "x-toolshim-session";
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(15 * 60);
/// Longest time in-flight requests get to finish after shutdown starts.
pub const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);
const REAP_INTERVAL: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    /// Upstream endpoint and defaults. Requests may override the model,
    /// temperature and max_tokens.
    pub upstream: BackendConfig,
    pub max_iterations: usize,
    /// Emit native `tool_calls` for the client to execute instead of running
    /// tools here.
    pub return_tool_calls: bool,
    pub session_ttl: Duration,
}

impl ProxyConfig {
    pub fn new(upstream: BackendConfig) -> Self {
        Self {
            upstream,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            return_tool_calls: false,
            session_ttl: DEFAULT_SESSION_TTL,
        }
    }
}

/// A server-held conversation, opted into with the session header.
#[derive(Debug)]
pub struct ProxySession {
    pub id: String,
    pub conversation: Conversation,
    pub created: Instant,
    pub expiry: Duration,
}

impl ProxySession {
    pub fn is_expired(&self, now: Instant) -> bool {
        now.duration_since(self.created) >= self.expiry
    }
}

type SharedSession = Arc<tokio::sync::Mutex<ProxySession>>;

struct SessionEntry {
    created: Instant,
    expiry: Duration,
    session: SharedSession,
}

pub struct Proxy {
    config: ProxyConfig,
    registry: Arc<Registry>,
    upstream_override: Option<Arc<dyn ChatBackend>>,
    sessions: Mutex<HashMap<String, SessionEntry>>,
    client: reqwest::Client,
}

impl Proxy {
    pub fn new(config: ProxyConfig, registry: Arc<Registry>) -> Self {
        let client = reqwest::Client::builder()
            .timeout(config.upstream.request_timeout)
            .build()
            .unwrap_or_default();
        Self {
            config,
            registry,
            upstream_override: None,
            sessions: Mutex::new(HashMap::new()),
            client,
        }
    }

    /// Answers every upstream call from `backend` instead of HTTP. Passthrough
    /// then re-encodes the backend's reply rather than copying bytes.
    pub fn with_backend(mut self, backend: Arc<dyn ChatBackend>) -> Self {
        self.upstream_override = Some(backend);
        self
    }

    pub fn config(&self) -> &ProxyConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    /// Drops expired sessions and returns how many were removed.
    pub fn reap_expired(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session lock");
        let before = sessions.len();
        sessions.retain(|_, e| now.duration_since(e.created) < e.expiry);
        before - sessions.len()
    }

    fn backend_for(&self, body: &Value) -> Result<Arc<dyn ChatBackend>, String> {
        if let Some(backend) = &self.upstream_override {
            return Ok(backend.clone());
        }
        let mut config = self.config.upstream.clone();
        if let Some(model) = body.get("model").and_then(Value::as_str) {
            config.model_id = model.to_string();
        }
        if let Some(t) = body.get("temperature").and_then(Value::as_f64) {
            config.temperature = t;
        }
        if let Some(n) = body.get("max_tokens").and_then(Value::as_u64) {
            config.max_tokens = u32::try_from(n).unwrap_or(u32::MAX);
        }
        HttpBackend::new(config)
            .map(|b| Arc::new(b) as Arc<dyn ChatBackend>)
            .map_err(|e| e.to_string())
    }

    fn model_name(&self, body: &Value) -> String {
        body.get("model")
            .and_then(Value::as_str)
            .unwrap_or(&self.config.upstream.model_id)
            .to_string()
    }

    fn conversation_config(&self, base_system: Option<String>) -> ConversationConfig {
        ConversationConfig {
            base_system,
            max_iterations: self.config.max_iterations,
            prompt_injection: true,
        }
    }
}

pub fn router(proxy: Arc<Proxy>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(proxy)
}

/// Serves until `shutdown` resolves, then gives in-flight requests at most
/// [`DRAIN_TIMEOUT`] to finish.
pub async fn serve<F>(listener: TcpListener, proxy: Arc<Proxy>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let reaper = {
        let proxy = proxy.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(REAP_INTERVAL);
            loop {
                tick.tick().await;
                let reaped = proxy.reap_expired();
                if reaped > 0 {
                    tracing::debug!(reaped, "expired proxy sessions removed");
                }
            }
        })
    };
    let (draining_tx, draining_rx) = tokio::sync::oneshot::channel::<()>();
    let server = axum::serve(listener, router(proxy)).with_graceful_shutdown(async move {
        shutdown.await;
        let _ = draining_tx.send(());
    });
    let deadline = async {
        if draining_rx.await.is_ok() {
            tokio::time::sleep(DRAIN_TIMEOUT).await;
        } else {
            std::future::pending::<()>().await;
        }
    };
    let result = tokio::select! {
        r = server.into_future() => r,
        _ = deadline => {
            tracing::warn!("drain timeout reached; dropping remaining connections");
            Ok(())
        }
    };
    reaper.abort();
    result
}

fn error_response(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    let body = json!({"error": {"message": message.into(), "type": kind}});
    (status, axum::Json(body)).into_response()
}

fn bad_request(message: impl Into<String>) -> Response {
    error_response(StatusCode::BAD_REQUEST, "invalid_request_error", message)
}

fn has_tools(body: &Value) -> bool {
    match body.get("tools") {
        None | Some(Value::Null) => false,
        Some(Value::Array(items)) => !items.is_empty(),
        Some(_) => true,
    }
}

/// Splits a request's messages into the base system prompt, prior turns and
/// the new user prompt.
fn split_messages(messages: Vec<ChatMessage>) -> Result<(Option<String>, Vec<ChatMessage>, String), String> {
    let mut messages = messages;
    let prompt = match messages.pop() {
        Some(m) if m.role == Role::User => m.content,
        Some(_) => return Err("the last message must have role \"user\"".into()),
        None => return Err("`messages` is empty".into()),
    };
    let base = match messages.first() {
        Some(m) if m.role == Role::System => Some(messages.remove(0).content),
        _ => None,
    };
    if let Some(i) = messages.iter().position(|m| m.role == Role::System) {
        return Err(format!(
            "a system message may only come first (found one at position {})",
            i + 1
        ));
    }
    Ok((base, messages, prompt))
}

async fn chat_completions(State(proxy): State<Arc<Proxy>>, headers: HeaderMap, raw: Bytes) -> Response {
    let body: Value = match serde_json::from_slice(&raw) {
        Ok(v) => v,
        Err(e) => {
            let text = String::from_utf8_lossy(&raw);
            let offset = byte_offset(&text, e.line(), e.column());
            return bad_request(format!("request body is not valid JSON at byte {offset}: {e}"));
        }
    };
    if !body.is_object() {
        return bad_request("request body must be a JSON object");
    }
    let session = headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.trim().to_string());
    match session {
        Some(id) if id != "new" => continue_session(&proxy, &id, &body).await,
        Some(_) => run_tools(&proxy, &body, true).await,
        None if has_tools(&body) => run_tools(&proxy, &body, false).await,
        None => passthrough(&proxy, &headers, raw, &body).await,
    }
}

async fn passthrough(proxy: &Proxy, headers: &HeaderMap, raw: Bytes, body: &Value) -> Response {
    if let Some(backend) = &proxy.upstream_override {
        let messages = match wire::parse_messages(body.get("messages").unwrap_or(&Value::Null)) {
            Ok(m) => m,
            Err(e) => return bad_request(e),
        };
        return match backend.complete(&messages).await {
            Ok(text) => axum::Json(wire::completion_body(&proxy.model_name(body), &text)).into_response(),
            Err(e) => upstream_failure(&e),
        };
    }
    let url = format!(
        "{}/chat/completions",
        proxy.config.upstream.base_url.trim_end_matches('/')
    );
    let mut request = proxy
        .client
        .post(url)
        .header(header::CONTENT_TYPE, "application/json")
        .body(raw);
    if let Some(key) = &proxy.config.upstream.api_key {
        request = request.bearer_auth(key);
    } else if let Some(auth) = headers.get(header::AUTHORIZATION) {
        request = request.header(header::AUTHORIZATION, auth.clone());
    }
    let upstream = match request.send().await {
        Ok(r) => r,
        Err(e) => {
            return error_response(
                StatusCode::BAD_GATEWAY,
                "upstream_error",
                format!("upstream unreachable: {e}"),
            )
        }
    };
    let status = StatusCode::from_u16(upstream.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    let content_type = upstream
        .headers()
        .get(reqwest::header::CONTENT_TYPE)
        .and_then(|v| HeaderValue::from_bytes(v.as_bytes()).ok());
    match upstream.bytes().await {
        Ok(bytes) => {
            let mut response = (status, bytes).into_response();
            if let Some(ct) = content_type {
                response.headers_mut().insert(header::CONTENT_TYPE, ct);
            }
            response
        }
        Err(e) => error_response(
            StatusCode::BAD_GATEWAY,
            "upstream_error",
            format!("reading upstream body: {e}"),
        ),
    }
}

fn upstream_failure(err: &crate::backend::BackendError) -> Response {
    let body = json!({"error": {
        "message": err.to_string(),
        "type": "upstream_error",
        "upstream_status": err.status(),
    }});
    (StatusCode::BAD_GATEWAY, axum::Json(body)).into_response()
}

async fn run_tools(proxy: &Proxy, body: &Value, open_session: bool) -> Response {
    if !has_tools(body) {
        return bad_request("a new session needs a non-empty `tools` array");
    }
    let tools = match ToolList::from_value(&body["tools"]) {
        Ok(t) => t,
        Err(e) => return bad_request(format!("invalid `tools`: {e}")),
    };
    let messages = match wire::parse_messages(body.get("messages").unwrap_or(&Value::Null)) {
        Ok(m) => m,
        Err(e) => return bad_request(e),
    };
    let (base, prior, prompt) = match split_messages(messages) {
        Ok(parts) => parts,
        Err(e) => return bad_request(e),
    };
    let backend = match proxy.backend_for(body) {
        Ok(b) => b,
        Err(e) => return bad_request(e),
    };
    let model = proxy.model_name(body);
    let config = proxy.conversation_config(base);

    if proxy.config.return_tool_calls {
        return emit_tool_calls(&tools, config, prior, &prompt, backend.as_ref(), &model).await;
    }
    if let Some(missing) = tools.names().find(|n| !proxy.registry.contains(n)) {
        return bad_request(format!("tool {missing:?} is not available on this proxy"));
    }

    let mut conversation = Conversation::with_history(tools, config, prior);
    let outcome = conversation.run_turn(&prompt, backend.as_ref(), &proxy.registry).await;
    let mut response = outcome_response(&outcome, &model, conversation.max_iterations());
    if open_session && outcome.kind != OutcomeKind::BackendError {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let now = Instant::now();
        let session = ProxySession {
            id: id.clone(),
            conversation,
            created: now,
            expiry: proxy.config.session_ttl,
        };
        proxy.sessions.lock().expect("session lock").insert(
            id.clone(),
            SessionEntry {
                created: now,
                expiry: proxy.config.session_ttl,
                session: Arc::new(tokio::sync::Mutex::new(session)),
            },
        );
        if let Ok(v) = HeaderValue::from_str(&id) {
            response.headers_mut().insert(SESSION_HEADER, v);
        }
    }
    response
}

async fn continue_session(proxy: &Proxy, id: &str, body: &Value) -> Response {
    let entry = {
        let mut sessions = proxy.sessions.lock().expect("session lock");
        match sessions.get(id) {
            None => None,
            Some(e) if Instant::now().duration_since(e.created) >= e.expiry => {
                sessions.remove(id);
                return error_response(StatusCode::GONE, "session_expired", format!("session {id} has expired"));
            }
            Some(e) => Some(e.session.clone()),
        }
    };
    proxy.reap_expired();
    let Some(shared) = entry else {
        return error_response(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"));
    };
    let messages = match wire::parse_messages(body.get("messages").unwrap_or(&Value::Null)) {
        Ok(m) => m,
        Err(e) => return bad_request(e),
    };
    let prompt = match messages.last() {
        Some(m) if m.role == Role::User => m.content.clone(),
        _ => return bad_request("the last message must have role \"user\""),
    };
    let backend = match proxy.backend_for(body) {
        Ok(b) => b,
        Err(e) => return bad_request(e),
    };
    let mut session = shared.lock().await;
    if session.is_expired(Instant::now()) {
        return error_response(StatusCode::GONE, "session_expired", format!("session {id} has expired"));
    }
    let outcome = session
        .conversation
        .run_turn(&prompt, backend.as_ref(), &proxy.registry)
        .await;
    let mut response = outcome_response(&outcome, &proxy.model_name(body), session.conversation.max_iterations());
    if let Ok(v) = HeaderValue::from_str(id) {
        response.headers_mut().insert(SESSION_HEADER, v);
    }
    response
}

/// The `toolshim_trace` entries for a finished turn.
pub fn trace_entries(outcome: &TurnOutcome, max_iterations: usize) -> Vec<Value> {
    let mut trace: Vec<Value> = outcome
        .tool_calls
        .iter()
        .map(|c| json!({"tool": c.tool, "parameters": c.parameters, "observation": c.observation}))
        .collect();
    if outcome.kind == OutcomeKind::IterationLimit {
        trace.push(json!({
            "iteration_limit": max_iterations,
            "note": format!("stopped after {max_iterations} tool call(s); the model kept requesting tools"),
        }));
    }
    trace
}

fn outcome_response(outcome: &TurnOutcome, model: &str, max_iterations: usize) -> Response {
    let content = match outcome.kind {
        OutcomeKind::FinalAnswer => outcome.answer.clone(),
        OutcomeKind::IterationLimit => outcome.last_response.clone().unwrap_or_default(),
        OutcomeKind::BackendError => {
            let err = outcome
                .error
                .clone()
                .unwrap_or_else(|| crate::backend::BackendError::Malformed("unknown failure".into()));
            return upstream_failure(&err);
        }
    };
    let mut body = wire::completion_body(model, &content);
    if outcome.kind == OutcomeKind::IterationLimit {
        body["choices"][0]["finish_reason"] = json!("length");
    }
    body["toolshim_trace"] = Value::Array(trace_entries(outcome, max_iterations));
    axum::Json(body).into_response()
}

/// One upstream round: if the model asks for a tool, hand the call back to
/// the client as a native `tool_calls` entry.
async fn emit_tool_calls(
    tools: &ToolList,
    config: ConversationConfig,
    prior: Vec<ChatMessage>,
    prompt: &str,
    backend: &dyn ChatBackend,
    model: &str,
) -> Response {
    let system = build_system_prompt(Some(tools), config.base_system.as_deref());
    let mut history = Vec::with_capacity(prior.len() + 2);
    if !system.is_empty() {
        history.push(ChatMessage::system(system));
    }
    history.extend(prior);
    history.push(ChatMessage::user(prompt.trim()));
    let text = match backend.complete(&history).await {
        Ok(t) => t,
        Err(e) => return upstream_failure(&e),
    };
    let invocation = scan_tool_invocation(&text)
        .found
        .or_else(|| scan_code_fence(&text).found.map(|c| c.to_tool_invocation()));
    let mut body = wire::completion_body(model, &text);
    if let Some(inv) = invocation {
        let arguments = serde_json::to_string(&inv.parameters).expect("parameters serialize");
        body["choices"][0]["message"] = json!({
            "role": "assistant",
            "content": null,
            "tool_calls": [{
                "id": format!("call_{}", uuid::Uuid::new_v4().simple()),
                "type": "function",
                "function": {"name": inv.tool, "arguments": arguments},
            }],
        });
        body["choices"][0]["finish_reason"] = json!("tool_calls");
    }
    axum::Json(body).into_response()
}
