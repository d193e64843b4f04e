use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use toolshim::agent::{Conversation, ConversationConfig, EventKind, OutcomeKind, TurnOutcome};
use toolshim::backend::{BackendConfig, ChatBackend, HttpBackend, Reply, ScriptedBackend, DEFAULT_MAX_TOKENS};
use toolshim::eval::{self, EvalOptions, LiveModel, ModelUnderTest, PersonaKind, ScriptedPersona, Suite};
use toolshim::proxy::{self, Proxy, ProxyConfig};
use toolshim::registry::Registry;
use toolshim::schema::{parse_tool_list, ToolList};
use toolshim::tools::{self, ToolsConfig};

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_ITERATION_LIMIT: u8 = 2;
const EXIT_BACKEND_ERROR: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "toolshim",
    version,
    about = "Prompt-level tool calling for chat models without native function calling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Upstream OpenAI-compatible base URL (the part before /chat/completions).
    #[arg(long, env = "TOOLSHIM_BASE_URL", global = true)]
    base_url: Option<String>,

    #[arg(long, env = "TOOLSHIM_MODEL", global = true, default_value = "default")]
    model: String,

    #[arg(long, env = "TOOLSHIM_API_KEY", global = true, hide_env_values = true)]
    api_key: Option<String>,

    #[arg(long, env = "TOOLSHIM_TEMPERATURE", global = true, default_value_t = 0.0)]
    temperature: f64,

    #[arg(long, env = "TOOLSHIM_MAX_TOKENS", global = true, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: u32,

    /// Tool list JSON. Defaults to the seven built-in tools.
    #[arg(long, env = "TOOLSHIM_TOOLS", global = true)]
    tools: Option<PathBuf>,

    /// Fixture directory for fixture-mode tools.
    #[arg(long, env = "TOOLSHIM_FIXTURES", global = true)]
    fixtures: Option<PathBuf>,

    /// Tools config TOML (mode, interpreter limits, live endpoints).
    #[arg(long, env = "TOOLSHIM_CONFIG", global = true)]
    config: Option<PathBuf>,

    #[arg(long, env = "TOOLSHIM_MAX_ITERATIONS", global = true, default_value_t = toolshim::agent::DEFAULT_MAX_ITERATIONS,
          value_parser = positive)]
    max_iterations: usize,

    /// How tool results are sent back to the model.
    #[arg(long, env = "TOOLSHIM_OBSERVATION_ROLE", global = true, value_enum, default_value_t = ObservationRole::Observation)]
    observation_role: ObservationRole,

    /// Put the tool instructions into the system prompt.
    #[arg(long, env = "TOOLSHIM_PROMPT_INJECTION", global = true, default_value = "true",
          num_args = 0..=1, default_missing_value = "true", action = ArgAction::Set,
          value_parser = clap::builder::BoolishValueParser::new())]
    prompt_injection: bool,

    /// Base system prompt placed before the tool instructions.
    #[arg(long, env = "TOOLSHIM_SYSTEM", global = true)]
    system: Option<String>,

    /// Print one line per tool dispatch to stderr.
    #[arg(long, env = "TOOLSHIM_TRACE", global = true)]
    trace: bool,

    /// Replay model replies from a JSON array of strings instead of calling a
    /// model. `{{observation}}` in a reply is replaced by the last tool result.
    #[arg(long, env = "TOOLSHIM_SCRIPT", global = true)]
    script: Option<PathBuf>,

    /// Write the conversation transcript as JSON lines.
    #[arg(long, env = "TOOLSHIM_TRANSCRIPT", global = true)]
    transcript: Option<PathBuf>,
}

fn positive(raw: &str) -> Result<usize, String> {
    match raw.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("{raw:?} is not a positive integer")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObservationRole {
    Observation,
    UserFallback,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Answer one query and exit.
    Run {
        #[arg(required = true, num_args = 1..)]
        query: Vec<String>,
    },
    /// Line-oriented chat on stdin/stdout until EOF.
    Chat,
    /// Run a task suite and print the success table.
    Eval {
        #[arg(long, env = "TOOLSHIM_SUITE", default_value = "data/suite.toml")]
        suite: PathBuf,
        /// Scripted persona(s) to evaluate instead of a live model:
        /// cooperative, broken-coder, refuser, prompt-sensitive.
        #[arg(long, env = "TOOLSHIM_PERSONA", value_delimiter = ',')]
        persona: Vec<String>,
        /// Exit non-zero unless every tool call succeeded.
        #[arg(long, env = "TOOLSHIM_STRICT")]
        strict: bool,
        /// Also print the correct-answer table.
        #[arg(long)]
        answers: bool,
        /// Write the full report as JSON.
        #[arg(long)]
        report_file: Option<PathBuf>,
    },
    /// Serve the OpenAI-compatible proxy.
    Proxy {
        #[arg(long, env = "TOOLSHIM_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        /// Return native tool_calls to the client instead of executing tools.
        #[arg(long, env = "TOOLSHIM_RETURN_TOOL_CALLS")]
        return_tool_calls: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_USAGE)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_FAILED)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return Failure::Runtime(e.to_string()).exit(),
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(f) => f.exit(),
    }
}

async fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Run { query } => cmd_run(&cli, &query.join(" ")).await,
        Command::Chat => cmd_chat(&cli).await,
        Command::Eval {
            suite,
            persona,
            strict,
            answers,
            report_file,
        } => cmd_eval(&cli, suite, persona, *strict, *answers, report_file.as_deref()).await,
        Command::Proxy {
            listen,
            return_tool_calls,
        } => cmd_proxy(&cli, listen, *return_tool_calls).await,
    }
}

impl Cli {
    fn observation_role_supported(&self) -> bool {
        self.observation_role == ObservationRole::Observation
    }

    fn tools_config(&self) -> Result<ToolsConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => ToolsConfig::from_toml_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
            None => ToolsConfig::default(),
        };
        if let Some(fixtures) = &self.fixtures {
            if !fixtures.is_dir() {
                return Err(Failure::Usage(format!(
                    "fixtures directory {} does not exist",
                    fixtures.display()
                )));
            }
            config.fixtures = fixtures.clone();
        }
        Ok(config)
    }

    fn tool_list(&self) -> Result<ToolList, Failure> {
        match &self.tools {
            None => Ok(tools::builtin_specs()),
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read tools file {}: {e}", path.display())))?;
                parse_tool_list(&raw).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
            }
        }
    }

    fn registry(&self, tool_list: &ToolList) -> Result<Registry, Failure> {
        tools::registry_for(tool_list, &self.tools_config()?).map_err(|e| Failure::Usage(e.to_string()))
    }

    fn backend_config(&self) -> Option<BackendConfig> {
        let base_url = self.base_url.clone()?;
        let mut config = BackendConfig::new(base_url, self.model.clone());
        config.api_key = self.api_key.clone().filter(|k| !k.is_empty());
        config.temperature = self.temperature;
        config.max_tokens = self.max_tokens;
        config.observation_role_supported = self.observation_role_supported();
        Some(config)
    }

    fn scripted(&self, path: &Path) -> Result<ScriptedBackend, Failure> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read script {}: {e}", path.display())))?;
        let replies: Vec<String> = serde_json::from_str(&raw).map_err(|e| {
            Failure::Usage(format!(
                "script {} must be a JSON array of strings: {e}",
                path.display()
            ))
        })?;
        Ok(ScriptedBackend::sequential(replies.into_iter().map(Reply::template))
            .with_observation_role(self.observation_role_supported()))
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>, Failure> {
        if let Some(path) = &self.script {
            return Ok(Arc::new(self.scripted(path)?));
        }
        let config = self
            .backend_config()
            .ok_or_else(|| Failure::Usage("no model: pass --base-url or --script".into()))?;
        HttpBackend::new(config)
            .map(|b| Arc::new(b) as Arc<dyn ChatBackend>)
            .map_err(|e| Failure::Usage(e.to_string()))
    }

    fn conversation(&self, tool_list: ToolList) -> Conversation {
        Conversation::new(
            tool_list,
            ConversationConfig {
                base_system: self.system.clone(),
                max_iterations: self.max_iterations,
                prompt_injection: self.prompt_injection,
            },
        )
    }
}

/// One line per dispatch, observation newlines escaped.
fn trace_lines(conversation: &Conversation, skip: usize) -> Vec<String> {
    conversation
        .transcript()
        .of_kind(EventKind::Dispatch)
        .skip(skip)
        .map(|e| {
            let p = &e.payload;
            let observation = p["observation"].as_str().unwrap_or_default().replace('\n', "\\n");
            format!(
                "[dispatch] {} {} -> {}",
                p["tool"].as_str().unwrap_or_default(),
                p["parameters"],
                observation
            )
        })
        .collect()
}

fn report_outcome(outcome: &TurnOutcome, out: &mut impl Write) -> u8 {
    match outcome.kind {
        OutcomeKind::FinalAnswer => {
            let _ = writeln!(out, "{}", outcome.answer);
            EXIT_OK
        }
        OutcomeKind::IterationLimit => {
            eprintln!(
                "iteration limit reached after {} tool call(s)",
                outcome.tool_calls.len()
            );
            if let Some(last) = &outcome.last_response {
                let _ = writeln!(out, "{last}");
            }
            EXIT_ITERATION_LIMIT
        }
        OutcomeKind::BackendError => {
            let detail = outcome.error.as_ref().map(ToString::to_string).unwrap_or_default();
            eprintln!("backend error: {detail}");
            EXIT_BACKEND_ERROR
        }
    }
}

fn write_transcript(cli: &Cli, conversation: &Conversation) -> Result<(), Failure> {
    if let Some(path) = &cli.transcript {
        std::fs::write(path, conversation.transcript().to_jsonl())
            .map_err(|e| Failure::Runtime(format!("writing transcript {}: {e}", path.display())))?;
    }
    Ok(())
}

async fn cmd_run(cli: &Cli, query: &str) -> Result<u8, Failure> {
    let tool_list = cli.tool_list()?;
    let registry = cli.registry(&tool_list)?;
    let backend = cli.backend()?;
    let mut conversation = cli.conversation(tool_list);
    let outcome = conversation.run_turn(query, backend.as_ref(), &registry).await;
    if cli.trace {
        for line in trace_lines(&conversation, 0) {
            eprintln!("{line}");
        }
    }
    write_transcript(cli, &conversation)?;
    Ok(report_outcome(&outcome, &mut std::io::stdout()))
}

async fn cmd_chat(cli: &Cli) -> Result<u8, Failure> {
    let tool_list = cli.tool_list()?;
    let registry = cli.registry(&tool_list)?;
    let backend = cli.backend()?;
    let mut conversation = cli.conversation(tool_list);
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let mut seen_dispatches = 0;
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Failure::Runtime(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "/quit" | "/exit" => break,
            "/injection on" | "/injection off" => {
                conversation.toggle_prompt_injection(line.ends_with("on"));
                let _ = writeln!(
                    stdout,
                    "prompt injection {}",
                    if line.ends_with("on") { "on" } else { "off" }
                );
                continue;
            }
            _ => {}
        }
        let outcome = conversation.run_turn(line, backend.as_ref(), &registry).await;
        if cli.trace {
            let lines = trace_lines(&conversation, seen_dispatches);
            seen_dispatches += lines.len();
            for l in lines {
                eprintln!("{l}");
            }
        }
        report_outcome(&outcome, &mut stdout);
        let _ = stdout.flush();
    }
    write_transcript(cli, &conversation)?;
    Ok(EXIT_OK)
}

async fn cmd_eval(
    cli: &Cli,
    suite_path: &Path,
    personas: &[String],
    strict: bool,
    answers: bool,
    report_file: Option<&Path>,
) -> Result<u8, Failure> {
    if !suite_path.is_file() {
        return Err(Failure::Usage(format!(
            "suite file {} does not exist",
            suite_path.display()
        )));
    }
    let suite = Suite::load(suite_path).map_err(|e| Failure::Usage(e.to_string()))?;
    let tool_list = cli.tool_list()?;
    let registry = cli.registry(&tool_list)?;

    let mut models: Vec<Box<dyn ModelUnderTest>> = Vec::new();
    for name in personas {
        let kind = PersonaKind::parse(name).ok_or_else(|| Failure::Usage(format!("unknown persona {name:?}")))?;
        models.push(Box::new(
            ScriptedPersona::new(kind).with_observation_role(cli.observation_role_supported()),
        ));
    }
    if models.is_empty() {
        let config = cli
            .backend_config()
            .ok_or_else(|| Failure::Usage("no model: pass --base-url or --persona".into()))?;
        models.push(Box::new(
            LiveModel::new(config).map_err(|e| Failure::Usage(e.to_string()))?,
        ));
    }

    let options = EvalOptions {
        max_iterations: cli.max_iterations,
        prompt_injection: cli.prompt_injection,
        base_system: cli.system.clone(),
    };
    let mut report = eval::EvalReport::default();
    for model in &models {
        let part = eval::run_eval(&suite, model.as_ref(), &registry, &options)
            .await
            .map_err(|e| Failure::Usage(e.to_string()))?;
        report.merge(part);
    }
    print!("{}", eval::render_report(&report, answers));
    if let Some(path) = report_file {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, json + "\n")
            .map_err(|e| Failure::Runtime(format!("writing report {}: {e}", path.display())))?;
    }
    let all_ok = models.iter().all(|m| report.all_tool_calls_succeeded(m.id()));
    Ok(if strict && !all_ok { EXIT_FAILED } else { EXIT_OK })
}

async fn cmd_proxy(cli: &Cli, listen: &str, return_tool_calls: bool) -> Result<u8, Failure> {
    let registry = Arc::new(cli.registry(&cli.tool_list()?)?);
    let upstream = match (&cli.script, cli.backend_config()) {
        (_, Some(config)) => config,
        (Some(_), None) => BackendConfig::new("http://unused.invalid", cli.model.clone()),
        (None, None) => return Err(Failure::Usage("no upstream: pass --base-url or --script".into())),
    };
    let mut config = ProxyConfig::new(upstream);
    config.max_iterations = cli.max_iterations;
    config.return_tool_calls = return_tool_calls;
    let mut proxy = Proxy::new(config, registry);
    if let Some(path) = &cli.script {
        proxy = proxy.with_backend(Arc::new(cli.scripted(path)?));
    }
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| Failure::Usage(format!("cannot listen on {listen}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
    eprintln!("listening on http://{addr}");
    proxy::serve(listener, Arc::new(proxy), shutdown_signal())
        .await
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok(EXIT_OK)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
}
