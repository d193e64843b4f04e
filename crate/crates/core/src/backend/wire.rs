//! OpenAI-compatible chat-completions request/response shapes.

use serde_json::{json, Value};

use crate::extract::ToolInvocation;
use crate::schema::{ChatMessage, ParamMap, Role};

pub fn messages_value(history: &[ChatMessage]) -> Value {
    Value::Array(
        history
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect(),
    )
}

pub fn request_body(model: &str, history: &[ChatMessage], temperature: f64, max_tokens: u32) -> Value {
    json!({
        "model": model,
        "messages": messages_value(history),
        "temperature": temperature,
        "max_tokens": max_tokens,
    })
}

/// Pulls `choices[0].message.content` out of a completion body.
pub fn response_content(body: &Value) -> Option<&str> {
    body.get("choices")?.get(0)?.get("message")?.get("content")?.as_str()
}

/// A minimal non-streaming completion body carrying one assistant message.
pub fn completion_body(model: &str, content: &str) -> Value {
    json!({
        "id": format!("chatcmpl-{}", uuid::Uuid::new_v4().simple()),
        "object": "chat.completion",
        "created": chrono::Utc::now().timestamp(),
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    })
}

/// Parses a `messages` array. `tool` and `function` roles map to
/// [`Role::Observation`]. An assistant message carrying native `tool_calls`
/// and no text becomes the prompt-level invocation text of its first call.
pub fn parse_messages(value: &Value) -> Result<Vec<ChatMessage>, String> {
    let items = value
        .as_array()
        .ok_or_else(|| "`messages` must be an array".to_string())?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let role = item
                .get("role")
                .and_then(Value::as_str)
                .ok_or_else(|| format!("messages[{i}] has no string `role`"))?;
            let role = match role {
                "tool" | "function" => Role::Observation,
                other => other.parse::<Role>().map_err(|e| format!("messages[{i}]: {e}"))?,
            };
            let content = match item.get("content") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => String::new(),
                Some(Value::Array(parts)) => parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(Value::as_str))
                    .collect::<Vec<_>>()
                    .join(""),
                Some(_) => return Err(format!("messages[{i}] has non-text `content`")),
            };
            let content = match item.get("tool_calls").and_then(|c| c.get(0)) {
                Some(call) if role == Role::Assistant && content.is_empty() => {
                    native_call_text(call).ok_or_else(|| format!("messages[{i}] has a malformed tool call"))?
                }
                _ => content,
            };
            Ok(ChatMessage { role, content })
        })
        .collect()
}

fn native_call_text(call: &Value) -> Option<String> {
    let function = call.get("function")?;
    let name = function.get("name")?.as_str()?;
    let parameters = match function.get("arguments") {
        Some(Value::String(raw)) if raw.trim().is_empty() => ParamMap::new(),
        Some(Value::String(raw)) => serde_json::from_str::<ParamMap>(raw).ok()?,
        Some(Value::Object(map)) => map.clone(),
        None | Some(Value::Null) => ParamMap::new(),
        Some(_) => return None,
    };
    Some(ToolInvocation::synthetic(name, parameters).raw_text)
}
