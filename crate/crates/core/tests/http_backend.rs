use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use toolshim::backend::stub::StubUpstream;
use toolshim::backend::{wire, BackendConfig, BackendError, ChatBackend, HttpBackend, Reply, ScriptedBackend};
use toolshim::registry::ToolBinding;
use toolshim::schema::{ParameterSchema, PropertySchema, ToolSpec};
use toolshim::{format_fallback_feedback, ChatMessage, Conversation, ConversationConfig, Registry};

fn config(stub: &StubUpstream) -> BackendConfig {
    let mut c = BackendConfig::new(stub.base_url(), "test-model");
    c.request_timeout = Duration::from_secs(10);
    c
}

#[tokio::test]
async fn reads_choice_content_and_sends_wire_body() {
    let body = wire::completion_body("m", "Hello there");
    let stub = StubUpstream::canned(200, body.to_string()).await.unwrap();
    let mut cfg = config(&stub);
    cfg.api_key = Some("secret".into());
    cfg.temperature = 0.5;
    cfg.max_tokens = 77;
    let backend = HttpBackend::new(cfg).unwrap();
    let reply = backend
        .complete(&[ChatMessage::system("s"), ChatMessage::user("hi")])
        .await
        .unwrap();
    assert_eq!(reply, "Hello there");
    let sent = &stub.captured()[0];
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.5);
    assert_eq!(sent["max_tokens"], 77);
    assert_eq!(
        sent["messages"],
        json!([
            {"role": "system", "content": "s"},
            {"role": "user", "content": "hi"},
        ])
    );
}

#[tokio::test]
async fn http_status_is_not_retried() {
    let stub = StubUpstream::canned(503, r#"{"error": "overloaded"}"#).await.unwrap();
    let backend = HttpBackend::new(config(&stub)).unwrap();
    let err = backend.complete(&[ChatMessage::user("hi")]).await.unwrap_err();
    assert_eq!(err.status(), Some(503));
    assert_eq!(stub.captured().len(), 1);
}

#[tokio::test]
async fn body_without_choices_is_malformed() {
    let stub = StubUpstream::canned(200, r#"{"choices": []}"#).await.unwrap();
    let backend = HttpBackend::new(config(&stub)).unwrap();
    let err = backend.complete(&[ChatMessage::user("hi")]).await.unwrap_err();
    assert!(matches!(err, BackendError::Malformed(_)));
}

#[tokio::test]
async fn unreachable_upstream_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut cfg = BackendConfig::new(format!("http://{addr}"), "m");
    cfg.request_timeout = Duration::from_secs(2);
    let err = HttpBackend::new(cfg)
        .unwrap()
        .complete(&[ChatMessage::user("hi")])
        .await
        .unwrap_err();
    assert!(
        matches!(err, BackendError::Transport(_) | BackendError::Timeout),
        "{err:?}"
    );
}

#[test]
fn invalid_config_is_rejected() {
    let mut cfg = BackendConfig::new("http://x", "m");
    cfg.temperature = 3.0;
    assert!(matches!(HttpBackend::new(cfg), Err(BackendError::InvalidConfig(_))));
    let mut cfg = BackendConfig::new("http://x", "m");
    cfg.max_tokens = 0;
    assert!(HttpBackend::new(cfg).is_err());
}

fn weather_registry() -> Registry {
    let mut reg = Registry::new();
    reg.register(ToolBinding::from_fn(
        ToolSpec::new(
            "get_weather",
            "Current weather",
            ParameterSchema::default()
                .property("city", PropertySchema::string("City"))
                .require("city"),
        ),
        |_| Ok("12°C, clear".into()),
    ))
    .unwrap();
    reg
}

async fn weather_turn(observation_role: bool) -> (Vec<Value>, String) {
    let script = ScriptedBackend::sequential([
        Reply::text(r#"{"tool": "get_weather", "parameters": {"city": "Paris"}}"#),
        Reply::echo_last_observation("Paris: "),
    ]);
    let stub = StubUpstream::backend(Arc::new(script)).await.unwrap();
    let mut cfg = config(&stub);
    cfg.observation_role_supported = observation_role;
    let backend = HttpBackend::new(cfg).unwrap();
    let registry = weather_registry();
    let mut conv = Conversation::new(registry.tool_list(), ConversationConfig::default());
    let out = conv.run_turn("Weather in Paris?", &backend, &registry).await;
    (stub.captured(), out.answer)
}

#[tokio::test]
async fn fallback_template_reaches_upstream_verbatim() {
    let (captured, answer) = weather_turn(false).await;
    assert_eq!(captured.len(), 2);
    let messages = captured[1]["messages"].as_array().unwrap();
    let last = messages.last().unwrap();
    assert_eq!(last["role"], "user");
    assert_eq!(
        last["content"],
        "Callget_weatherThe result returned by the tool is:12°C, clear. Please continue to answer my previous question based on the result returned by the tool."
    );
    assert_eq!(last["content"], format_fallback_feedback("get_weather", "12°C, clear"));
    assert!(!messages.iter().any(|m| m["role"] == "observation"));
    // The scripted upstream sees the rewritten turn as plain user text.
    assert!(answer.starts_with("Paris: "));
}

#[tokio::test]
async fn observation_role_is_sent_when_supported() {
    let (captured, answer) = weather_turn(true).await;
    let messages = captured[1]["messages"].as_array().unwrap();
    assert_eq!(messages.last().unwrap()["role"], "observation");
    assert_eq!(messages.last().unwrap()["content"], "12°C, clear");
    assert_eq!(answer, "Paris: 12°C, clear");
}
