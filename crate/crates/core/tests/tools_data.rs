mod common;

use std::collections::BTreeMap;

use serde_json::{json, Value};
use toolshim::eval::{Suite, TASK_ORDER};
use toolshim::registry::FailureCode;
use toolshim::tools::{builtin_registry, builtin_specs, ToolsConfig};
use toolshim::{parse_tool_list, ParamMap, Registry};

fn registry() -> Registry {
    builtin_registry(&ToolsConfig::fixtures(common::data_dir().join("fixtures"))).unwrap()
}

fn params(v: Value) -> ParamMap {
    v.as_object().unwrap().clone()
}

#[test]
fn bundled_tool_list_matches_builtins() {
    let raw = std::fs::read_to_string(common::data_dir().join("tools.json")).unwrap();
    assert_eq!(parse_tool_list(&raw).unwrap(), builtin_specs());
    let weather = std::fs::read_to_string(common::data_dir().join("weather_tools.json")).unwrap();
    let weather = parse_tool_list(&weather).unwrap();
    assert_eq!(weather.names().collect::<Vec<_>>(), ["get_weather"]);
    assert_eq!(weather.get("get_weather"), builtin_specs().get("get_weather"));
}

#[test]
fn suite_has_seven_tasks_of_ten() {
    let suite = Suite::load(&common::data_dir().join("suite.toml")).unwrap();
    let names: Vec<&str> = suite.tasks.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, TASK_ORDER);
    for task in &suite.tasks {
        assert_eq!(task.queries.len(), 10, "{}", task.name);
        assert!(task.queries.iter().all(|q| q.call.is_some()), "{}", task.name);
    }
}

/// Each query's reference call, dispatched for real against the fixtures,
/// yields an observation containing the expected substrings. This keeps the
/// suite and the fixture corpus in step.
#[tokio::test]
async fn every_reference_call_answers_its_query() {
    let suite = Suite::load(&common::data_dir().join("suite.toml")).unwrap();
    let registry = registry();
    suite.check_registered(&registry).unwrap();
    for task in &suite.tasks {
        let tool = task.target_tool().unwrap();
        for (i, query) in task.queries.iter().enumerate() {
            let result = registry.dispatch(tool, query.call.as_ref().unwrap()).await;
            assert!(result.ok, "{} #{i}: {}", task.name, result.content);
            for needle in task.expected(i).unwrap() {
                assert!(
                    result.content.to_lowercase().contains(&needle.to_lowercase()),
                    "{} #{i}: {needle:?} not in {:?}",
                    task.name,
                    result.content
                );
            }
        }
    }
}

#[tokio::test]
async fn fixture_tools_are_pure() {
    let registry = registry();
    let calls = [
        ("get_weather", json!({"city": "Paris"})),
        ("get_time", json!({"timezone": "Asia/Tokyo"})),
        ("google_search", json!({"query": "euro 2024 host country"})),
        ("arxiv_query", json!({"query": "attention is all you need"})),
        ("kg_search", json!({"entity": "Carol"})),
        ("file_search", json!({"pattern": "*.md"})),
    ];
    let mut seen = BTreeMap::new();
    for round in 0..3 {
        for (tool, p) in &calls {
            let out = registry.dispatch(tool, &params(p.clone())).await;
            assert!(out.ok, "{tool}: {}", out.content);
            let previous = seen.entry(*tool).or_insert_with(|| out.content.clone());
            assert_eq!(previous, &out.content, "{tool} changed on round {round}");
        }
    }
    assert_eq!(seen["get_weather"], "12°C, clear");
    assert!(seen["get_time"].contains("2024-07-01"));
    assert!(seen["arxiv_query"].contains("1706.03762"));
}

#[tokio::test]
async fn fixture_keys_are_case_and_space_insensitive() {
    let registry = registry();
    let a = registry
        .dispatch("get_weather", &params(json!({"city": "  NEW   York "})))
        .await;
    let b = registry
        .dispatch("get_weather", &params(json!({"city": "new york"})))
        .await;
    assert!(a.ok, "{}", a.content);
    assert_eq!(
        a,
        toolshim::DispatchResult {
            elapsed: a.elapsed,
            ..b
        }
    );
}

#[tokio::test]
async fn missing_fixture_is_a_tool_failure() {
    let out = registry()
        .dispatch("get_weather", &params(json!({"city": "Atlantis"})))
        .await;
    assert!(!out.ok);
    assert_eq!(out.failure_code(), Some(FailureCode::ToolFailed));
}

#[tokio::test]
async fn knowledge_graph_answers_relations() {
    let registry = registry();
    let out = registry
        .dispatch("kg_search", &params(json!({"entity": "alice", "relation": "works_at"})))
        .await;
    assert!(out.ok);
    assert!(out.content.contains("Acme"), "{}", out.content);
    assert!(!out.content.contains("Bob"), "{}", out.content);
    let everything = registry
        .dispatch("kg_search", &params(json!({"entity": "Alice"})))
        .await;
    for needle in ["Bob", "Acme", "Lisbon", "Carol"] {
        assert!(
            everything.content.contains(needle),
            "{needle} in {}",
            everything.content
        );
    }
}

#[tokio::test]
async fn file_search_stays_inside_its_root() {
    let registry = registry();
    let md = registry
        .dispatch("file_search", &params(json!({"pattern": "*.md"})))
        .await;
    assert!(md.ok);
    for name in ["README.md", "q1-summary.md", "q2-summary.md", "meeting-2024-06-12.md"] {
        assert!(md.content.contains(name), "{name} in {}", md.content);
    }
    assert!(!md.content.contains("budget.csv"));
    let escape = registry
        .dispatch("file_search", &params(json!({"pattern": "../*"})))
        .await;
    assert!(!escape.content.contains("graph.tsv"), "{}", escape.content);
}

#[tokio::test]
async fn unknown_tool_and_bad_params_fail_with_codes() {
    let registry = registry();
    let unknown = registry.dispatch("teleport", &ParamMap::new()).await;
    assert_eq!(unknown.failure_code(), Some(FailureCode::UnknownTool));
    let missing = registry.dispatch("get_weather", &ParamMap::new()).await;
    assert_eq!(missing.failure_code(), Some(FailureCode::InvalidParameters));
}
