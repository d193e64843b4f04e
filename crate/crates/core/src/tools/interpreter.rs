use std::process::Stdio;
use std::time::Duration;

use serde::Deserialize;
use tokio::io::AsyncReadExt;
use tokio::process::Command;
use tokio::sync::Mutex;

use super::cap_output;
use crate::registry::ToolError;

const STDERR_TAIL: usize = 1200;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct InterpreterConfig {
    /// Program and leading arguments; the script path is appended.
    pub cmd: Vec<String>,
    pub timeout_s: f64,
    /// Cap on returned output, in characters.
    pub max_output: usize,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            cmd: vec!["python3".into(), "-I".into()],
            timeout_s: 10.0,
            max_output: 8192,
        }
    }
}

/// Runs model-written code in a fresh scratch directory with a cleared
/// environment, a wall-clock limit and an output cap. One execution at a
/// time.
pub struct Interpreter {
    config: InterpreterConfig,
    slot: Mutex<()>,
}

impl Interpreter {
    pub fn new(config: InterpreterConfig) -> Self {
        Self {
            config,
            slot: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &InterpreterConfig {
        &self.config
    }

    /// Combined stdout and stderr on success. A nonzero exit is a
    /// `tool_failed` error carrying the exit code and the end of stderr.
    pub async fn run(&self, code: &str) -> Result<String, ToolError> {
        if code.trim().is_empty() {
            return Err(ToolError::InvalidParameters("code is empty".into()));
        }
        let (program, args) = self
            .config
            .cmd
            .split_first()
            .ok_or_else(|| ToolError::Failed("interpreter.cmd is empty".into()))?;

        let _slot = self.slot.lock().await;
        let scratch = tempfile::tempdir().map_err(|e| ToolError::Failed(format!("cannot create scratch dir: {e}")))?;
        let script = scratch.path().join("main.py");
        tokio::fs::write(&script, code)
            .await
            .map_err(|e| ToolError::Failed(format!("cannot write script: {e}")))?;

        let mut command = Command::new(program);
        command
            .args(args)
            .arg(&script)
            .current_dir(scratch.path())
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("HOME", scratch.path())
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true);
        let mut child = command
            .spawn()
            .map_err(|e| ToolError::Failed(format!("cannot start {program:?}: {e}")))?;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let limit = Duration::from_secs_f64(self.config.timeout_s.max(0.0));
        let run = async {
            let mut out = Vec::new();
            let mut err = Vec::new();
            let (r1, r2, status) =
                tokio::join!(stdout.read_to_end(&mut out), stderr.read_to_end(&mut err), child.wait());
            r1.and(r2)?;
            Ok::<_, std::io::Error>((status?, out, err))
        };
        let (status, out, err) = match tokio::time::timeout(limit, run).await {
            Ok(result) => result.map_err(|e| ToolError::Failed(format!("interpreter I/O: {e}")))?,
            Err(_) => {
                return Err(ToolError::Timeout(format!(
                    "code did not finish within {}s",
                    self.config.timeout_s
                )))
            }
        };
        let stdout = String::from_utf8_lossy(&out);
        let stderr = String::from_utf8_lossy(&err);
        if status.success() {
            let combined = format!("{stdout}{stderr}");
            Ok(cap_output(&combined, self.config.max_output))
        } else {
            let code = status.code().map_or_else(|| "signal".to_string(), |c| c.to_string());
            Err(ToolError::Failed(format!(
                "exit code {code}: {}",
                tail(&stderr, STDERR_TAIL)
            )))
        }
    }
}

fn tail(text: &str, max_chars: usize) -> &str {
    let text = text.trim_end();
    let count = text.chars().count();
    if count <= max_chars {
        return text;
    }
    let skip = count - max_chars;
    let cut = text.char_indices().nth(skip).map_or(0, |(i, _)| i);
    &text[cut..]
}
