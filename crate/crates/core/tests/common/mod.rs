#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::*;
use serde_json::{Map, Value};
use toolshim::extract::to_spaced_json;
use toolshim::ParamMap;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Does an anchor (`{`, whitespace, `"tool":`, whitespace, `"`) start at `s`?
fn anchored_at(text: &str, s: usize) -> bool {
    let Some(rest) = text.get(s..) else {
        return false;
    };
    let Some(rest) = rest.strip_prefix('{') else {
        return false;
    };
    let rest = rest.trim_start_matches(char::is_whitespace);
    let Some(rest) = rest.strip_prefix("\"tool\":") else {
        return false;
    };
    rest.trim_start_matches(char::is_whitespace).starts_with('"')
}

/// Reference extractor: for each anchor in order, the shortest prefix that
/// parses as JSON is the candidate; the first candidate with exactly a string
/// `tool` and an object `parameters` wins.
pub fn oracle(text: &str) -> Option<(String, ParamMap, usize, usize)> {
    for s in 0..text.len() {
        if !anchored_at(text, s) {
            continue;
        }
        let candidate = (s + 1..=text.len()).find_map(|e| {
            let slice = text.get(s..e)?;
            serde_json::from_str::<Value>(slice).ok().map(|v| (v, e))
        });
        let Some((Value::Object(obj), e)) = candidate else {
            continue;
        };
        if obj.len() != 2 {
            continue;
        }
        if let (Some(Value::String(tool)), Some(Value::Object(params))) = (obj.get("tool"), obj.get("parameters")) {
            return Some((tool.clone(), params.clone(), s, e));
        }
    }
    None
}

pub fn tool_name() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,12}"
}

/// Strings full of characters that trip naive extractors.
pub fn hostile_string() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 {}\"\\\\\n:,\\[\\]é日]{0,14}"
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        hostile_string().prop_map(Value::String),
        any::<i32>().prop_map(Value::from),
        any::<bool>().prop_map(Value::Bool),
    ]
}

pub fn param_value() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::vec(("[a-z]{1,6}", inner), 0..4)
                .prop_map(|kv| Value::Object(kv.into_iter().collect::<Map<_, _>>())),
        ]
    })
}

pub fn params() -> impl Strategy<Value = ParamMap> {
    prop::collection::vec(("[a-z_]{1,8}", param_value()), 0..5).prop_map(|kv| kv.into_iter().collect())
}

pub fn flat_params() -> impl Strategy<Value = ParamMap> {
    prop::collection::vec(("[a-z]{1,6}", hostile_string().prop_map(Value::String)), 0..4)
        .prop_map(|kv| kv.into_iter().collect())
}

fn ws() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just(""), Just(" "), Just("\n"), Just("\n  "), Just("\t")]
}

/// Invocation text with varied spacing and parameter layout.
pub fn invocation_text(name: &str, params: &ParamMap) -> impl Strategy<Value = String> {
    let name = serde_json::to_string(name).unwrap();
    let value = Value::Object(params.clone());
    let layouts = vec![
        to_spaced_json(&value),
        serde_json::to_string(&value).unwrap(),
        serde_json::to_string_pretty(&value).unwrap(),
    ];
    (ws(), ws(), ws(), ws(), ws(), prop::sample::select(layouts))
        .prop_map(move |(a, b, c, d, e, body)| format!("{{{a}\"tool\":{b}{name},{c}\"parameters\":{d}{body}{e}}}"))
}

pub fn prose() -> impl Strategy<Value = String> {
    let decoys = prop_oneof![
        Just(String::new()),
        Just(r#"{"tool": "broken""#.to_string()),
        Just(r#"{"tool": "x", "parameters": 5}"#.to_string()),
        Just(r#"{"tool":"x","parameters":{},"extra":1}"#.to_string()),
        Just(r#""use {\"tool\": \"name\"} to call""#.to_string()),
        Just("```python\nprint(1)\n```".to_string()),
        Just("{'tool': 'single'}".to_string()),
    ];
    ("[a-zA-Z .,!?\n{}\"\\\\:]{0,30}", decoys, "[a-zA-Z .,!?\n:]{0,20}").prop_map(|(a, d, b)| format!("{a}{d}{b}"))
}

/// Prose, one invocation, prose; plus the embedded pair.
pub fn embedded_case() -> impl Strategy<Value = (String, String, ParamMap)> {
    (tool_name(), params())
        .prop_flat_map(|(name, params)| {
            let text = invocation_text(&name, &params);
            (prose(), text, prose(), Just(name), Just(params))
        })
        .prop_map(|(pre, inv, post, name, params)| (format!("{pre}{inv}{post}"), name, params))
}

pub fn flat_case() -> impl Strategy<Value = String> {
    (tool_name(), flat_params())
        .prop_flat_map(|(name, params)| {
            let text = invocation_text(&name, &params);
            ("[a-zA-Z .,!?\n]{0,30}", text, "[a-zA-Z .,!?\n{}\"]{0,30}")
        })
        .prop_map(|(pre, inv, post)| format!("{pre}{inv}{post}"))
}

/// What the original non-greedy pattern yields, when its result is usable:
/// the match exists and its parameter group parses as a flat string map.
pub fn flat_pattern(text: &str) -> Option<(String, ParamMap)> {
    use std::sync::LazyLock;
    static PATTERN: LazyLock<regex::Regex> =
        LazyLock::new(|| regex::Regex::new(r#"(?s)\{\s*"tool":\s*"(.*?)",\s*"parameters":\s*\{(.*?)\}\s*\}"#).unwrap());
    let caps = PATTERN.captures(text)?;
    let tool = caps.get(1)?.as_str().to_string();
    let params: ParamMap = serde_json::from_str(&format!("{{{}}}", caps.get(2)?.as_str())).ok()?;
    params.values().all(Value::is_string).then_some((tool, params))
}
