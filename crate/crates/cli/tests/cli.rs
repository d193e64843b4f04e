use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn toolshim() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_toolshim"));
    for (key, _) in std::env::vars() {
        if key.starts_with("TOOLSHIM_") {
            cmd.env_remove(key);
        }
    }
    cmd.arg("--fixtures").arg(data("fixtures"));
    cmd
}

fn weather_run(script: &str, extra: &[&str]) -> Output {
    toolshim()
        .arg("run")
        .arg("--tools")
        .arg(data("weather_tools.json"))
        .arg("--script")
        .arg(data(script))
        .args(extra)
        .arg("What's the weather in Paris?")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn injection_on_answers_from_fixture() {
    let out = weather_run("scripts/weather_flow.json", &["--trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out), "The current weather in Paris is 12°C, clear.\n");
    assert_eq!(stderr(&out).lines().filter(|l| l.starts_with("[dispatch]")).count(), 1);
}

#[test]
fn injection_off_prints_refusal_without_dispatch() {
    let out = weather_run("scripts/refusal.json", &["--prompt-injection=false", "--trace"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("I'm sorry"));
    assert!(!stderr(&out).contains("[dispatch]"));
}

#[test]
fn trace_has_one_line_per_dispatch_event() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    let out = weather_run(
        "scripts/always_calls.json",
        &[
            "--trace",
            "--max-iterations",
            "2",
            "--transcript",
            transcript.to_str().unwrap(),
        ],
    );
    let dispatches = std::fs::read_to_string(&transcript)
        .unwrap()
        .lines()
        .filter(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"] == "dispatch")
        .count();
    assert_eq!(dispatches, 2);
    assert_eq!(
        stderr(&out).lines().filter(|l| l.starts_with("[dispatch]")).count(),
        dispatches
    );
}

#[test]
fn iteration_limit_exits_2() {
    let out = weather_run("scripts/always_calls.json", &["--max-iterations", "2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn backend_error_exits_3() {
    let out = toolshim()
        .args(["run", "--base-url", "http://127.0.0.1:9", "hello"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn missing_tools_file_exits_64() {
    let out = toolshim()
        .args(["run", "--tools", "/nonexistent/tools.json", "--script"])
        .arg(data("scripts/refusal.json"))
        .arg("q")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn usage_errors_exit_64_help_exits_0() {
    assert_eq!(
        toolshim().arg("--no-such-flag").output().unwrap().status.code(),
        Some(64)
    );
    assert_eq!(toolshim().arg("run").output().unwrap().status.code(), Some(64));
    assert_eq!(
        toolshim()
            .args(["run", "--max-iterations", "0", "q"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(64)
    );
    assert_eq!(toolshim().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn flags_win_over_env() {
    let out = toolshim()
        .env("TOOLSHIM_PROMPT_INJECTION", "false")
        .env("TOOLSHIM_MAX_ITERATIONS", "1")
        .arg("run")
        .arg("--tools")
        .arg(data("weather_tools.json"))
        .arg("--script")
        .arg(data("scripts/always_calls.json"))
        .args(["--max-iterations", "2", "q"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("after 2 tool call"));
}

#[test]
fn eval_matches_golden() {
    let out = toolshim()
        .arg("eval")
        .arg("--suite")
        .arg(data("suite.toml"))
        .args(["--persona", "cooperative,broken-coder", "--answers"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let golden = include_str!("golden/eval_personas.txt");
    assert_eq!(stdout(&out), golden);
}

#[test]
fn strict_eval_fails_for_refuser() {
    let run = |persona: &str| {
        toolshim()
            .arg("eval")
            .arg("--suite")
            .arg(data("suite.toml"))
            .args(["--strict", "--persona", persona])
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(run("refuser"), Some(1));
    assert_eq!(run("cooperative"), Some(0));
}

#[test]
fn eval_without_suite_file_exits_64() {
    let out = toolshim()
        .args(["eval", "--suite", "/nonexistent/suite.toml", "--persona", "cooperative"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn chat_keeps_one_conversation() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.json");
    std::fs::write(&script, r#"["Hello!", "Goodbye!"]"#).unwrap();
    let transcript = dir.path().join("t.jsonl");
    let mut child = toolshim()
        .arg("chat")
        .arg("--tools")
        .arg(data("weather_tools.json"))
        .arg("--script")
        .arg(&script)
        .arg("--transcript")
        .arg(&transcript)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hi\n\nbye\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "Hello!\nGoodbye!\n");
    let users = std::fs::read_to_string(&transcript)
        .unwrap()
        .lines()
        .filter(|l| l.contains(r#""kind":"user""#))
        .count();
    assert_eq!(users, 2);
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn proxy_serves_healthz_and_stops_on_sigterm() {
    let mut child = toolshim()
        .arg("proxy")
        .args(["--listen", "127.0.0.1:0", "--script"])
        .arg(data("scripts/weather_flow.json"))
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let banner = lines.next().unwrap().unwrap();
    let addr = banner.trim_start_matches("listening on http://").to_string();

    let response = http_get(&addr, "/healthz");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.ends_with("ok"), "{response}");

    Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().unwrap() {
            break status;
        }
        assert!(started.elapsed() < Duration::from_secs(6), "proxy did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}
