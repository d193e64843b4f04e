//! Task suites, scripted model personas and success-count reports.
//!
//! A suite is a list of tasks, each offering some tools and a handful of
//! queries. Every query runs in a fresh [`Conversation`] and is scored on two
//! independent metrics: whether the task's tool was dispatched, and whether
//! the final answer contains the expected substrings.

use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::agent::{Conversation, ConversationConfig, OutcomeKind, TurnOutcome, DEFAULT_MAX_ITERATIONS};
use crate::backend::{
    invocation_reply, BackendConfig, BackendError, ChatBackend, HttpBackend, Reply, ScriptStep, ScriptedBackend,
};
use crate::extract::INTERPRETER_TOOL;
use crate::registry::Registry;
use crate::schema::{ChatMessage, ParamMap, Role, ToolList};

/// Column order of the report table.
pub const TASK_ORDER: [&str; 7] = [
    "Time Zone Query",
    "Weather Query",
    "Google Search",
    "Python Interpreter",
    "Local File Search",
    "ArXiv Query",
    "Knowledge Graph Search",
];

/// Text that must appear in the system prompt before a prompt-sensitive
/// persona will call tools.
pub const INJECTION_ANCHOR: &str = "callable tools";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub prompt: String,
    /// Parameters a cooperative model sends to the task's tool. Only scripted
    /// personas use it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<ParamMap>,
    /// Overrides the task-level substrings for this query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_contains: Option<Vec<String>>,
}

impl EvalQuery {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            call: None,
            answer_contains: None,
        }
    }

    pub fn with_call(mut self, call: ParamMap) -> Self {
        self.call = Some(call);
        self
    }

    pub fn expecting<I, S>(mut self, substrings: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.answer_contains = Some(substrings.into_iter().map(Into::into).collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub name: String,
    #[serde(rename = "tools")]
    pub tool_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub must_call_tool: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_contains: Option<Vec<String>>,
    #[serde(rename = "query")]
    pub queries: Vec<EvalQuery>,
}

impl EvalTask {
    /// Substrings the answer to query `index` must contain.
    pub fn expected(&self, index: usize) -> Option<&[String]> {
        self.queries
            .get(index)
            .and_then(|q| q.answer_contains.as_deref())
            .or(self.answer_contains.as_deref())
    }

    /// The tool scripted personas call: `must_call_tool`, else the first
    /// offered tool.
    pub fn target_tool(&self) -> Option<&str> {
        self.must_call_tool
            .as_deref()
            .or_else(|| self.tool_names.first().map(String::as_str))
    }

    fn check(&self) -> Result<(), SuiteError> {
        let invalid = |message: &str| SuiteError::InvalidTask {
            task: self.name.clone(),
            message: message.to_string(),
        };
        if self.queries.is_empty() {
            return Err(invalid("has no queries"));
        }
        let has_answer_check =
            self.answer_contains.is_some() || self.queries.iter().all(|q| q.answer_contains.is_some());
        if self.must_call_tool.is_none() && !has_answer_check {
            return Err(invalid("sets neither must_call_tool nor answer_contains"));
        }
        if let Some(tool) = &self.must_call_tool {
            if !self.tool_names.contains(tool) {
                return Err(invalid(&format!("must_call_tool {tool:?} is not among its tools")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SuiteError {
    #[error("reading suite {path}: {message}")]
    Io { path: String, message: String },
    #[error("parsing suite: {0}")]
    Parse(String),
    #[error("task {task:?} {message}")]
    InvalidTask { task: String, message: String },
    #[error("task {task:?} uses tool {tool:?}, which is not registered")]
    Unregistered { task: String, tool: String },
    #[error("model {model:?} cannot run task {task:?} query {query}: {message}")]
    Model {
        model: String,
        task: String,
        query: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Suite {
    #[serde(default, rename = "task")]
    pub tasks: Vec<EvalTask>,
}

impl Suite {
    pub fn new(tasks: Vec<EvalTask>) -> Result<Self, SuiteError> {
        let suite = Self { tasks };
        suite.check()?;
        Ok(suite)
    }

    pub fn parse(text: &str) -> Result<Self, SuiteError> {
        let suite: Suite = toml::from_str(text).map_err(|e| SuiteError::Parse(e.to_string()))?;
        suite.check()?;
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let text = std::fs::read_to_string(path).map_err(|e| SuiteError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    fn check(&self) -> Result<(), SuiteError> {
        self.tasks.iter().try_for_each(EvalTask::check)
    }

    /// Every tool the suite names must be in `registry`.
    pub fn check_registered(&self, registry: &Registry) -> Result<(), SuiteError> {
        for task in &self.tasks {
            let named = task.tool_names.iter().chain(task.must_call_tool.iter());
            for tool in named {
                if !registry.contains(tool) {
                    return Err(SuiteError::Unregistered {
                        task: task.name.clone(),
                        tool: tool.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Something that can answer a query: a scripted persona or a live model.
pub trait ModelUnderTest: Send + Sync {
    fn id(&self) -> &str;

    /// A backend for one query's conversation.
    fn backend_for(&self, task: &EvalTask, query_index: usize) -> Result<Arc<dyn ChatBackend>, String>;
}

/// How a scripted persona behaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaKind {
    /// Calls the task's tool with the reference parameters, then answers
    /// from the observation.
    Cooperative,
    /// Cooperative, except that interpreter code is wrong on every query
    /// after the first `correct_code` ones.
    BrokenCoder { correct_code: usize },
    /// Never calls a tool.
    Refuser,
    /// Cooperative only when the system prompt describes the tools;
    /// otherwise refuses.
    PromptSensitive,
}

impl PersonaKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cooperative" => Some(Self::Cooperative),
            "broken_coder" => Some(Self::BrokenCoder { correct_code: 1 }),
            "refuser" => Some(Self::Refuser),
            "prompt_sensitive" => Some(Self::PromptSensitive),
            _ => None,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Cooperative => "cooperative",
            Self::BrokenCoder { .. } => "broken_coder",
            Self::Refuser => "refuser",
            Self::PromptSensitive => "prompt_sensitive",
        }
    }
}

pub const REFUSAL: &str =
    "I'm sorry, I don't have access to real-time information or tools, so I can't answer that reliably.";
pub const ANSWER_PREFIX: &str = "Based on the tool result: ";
/// Code the broken coder emits: it references a name it never defined.
pub const BROKEN_CODE: &str = "print(result)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPersona {
    pub kind: PersonaKind,
    pub observation_role_supported: bool,
}

impl ScriptedPersona {
    pub fn new(kind: PersonaKind) -> Self {
        Self {
            kind,
            observation_role_supported: true,
        }
    }

    pub fn cooperative() -> Self {
        Self::new(PersonaKind::Cooperative)
    }

    pub fn broken_coder() -> Self {
        Self::new(PersonaKind::BrokenCoder { correct_code: 1 })
    }

    pub fn refuser() -> Self {
        Self::new(PersonaKind::Refuser)
    }

    pub fn prompt_sensitive() -> Self {
        Self::new(PersonaKind::PromptSensitive)
    }

    pub fn with_observation_role(mut self, supported: bool) -> Self {
        self.observation_role_supported = supported;
        self
    }

    /// The backend for one conversation about `prompt`, calling `tool` with
    /// `call` when it decides to use a tool.
    pub fn script(&self, tool: &str, call: &ParamMap) -> Result<ScriptedBackend, String> {
        let call_text = invocation_reply(tool, call).map_err(|e| e.to_string())?;
        let has_observation = |h: &[ChatMessage]| h.iter().any(|m| m.role == Role::Observation);
        let steps = match self.kind {
            PersonaKind::Refuser => vec![ScriptStep::always(REFUSAL)],
            PersonaKind::Cooperative | PersonaKind::BrokenCoder { .. } => vec![
                ScriptStep::when(has_observation, Reply::echo_last_observation(ANSWER_PREFIX)),
                ScriptStep::always(call_text),
            ],
            PersonaKind::PromptSensitive => vec![
                ScriptStep::when(|h: &[ChatMessage]| !describes_tools(h), REFUSAL),
                ScriptStep::when(has_observation, Reply::echo_last_observation(ANSWER_PREFIX)),
                ScriptStep::always(call_text),
            ],
        };
        Ok(ScriptedBackend::match_based(steps).with_observation_role(self.observation_role_supported))
    }
}

fn describes_tools(history: &[ChatMessage]) -> bool {
    history
        .iter()
        .any(|m| m.role == Role::System && m.content.contains(INJECTION_ANCHOR))
}

impl ModelUnderTest for ScriptedPersona {
    fn id(&self) -> &str {
        self.kind.id()
    }

    fn backend_for(&self, task: &EvalTask, query_index: usize) -> Result<Arc<dyn ChatBackend>, String> {
        let tool = task.target_tool().ok_or("task offers no tools")?;
        let query = task.queries.get(query_index).ok_or("no such query")?;
        let mut call = query.call.clone().ok_or("query has no reference call")?;
        if let PersonaKind::BrokenCoder { correct_code } = self.kind {
            if tool == INTERPRETER_TOOL && query_index >= correct_code {
                call.insert("code".into(), BROKEN_CODE.into());
            }
        }
        Ok(Arc::new(self.script(tool, &call)?))
    }
}

/// A real model behind an OpenAI-compatible endpoint.
pub struct LiveModel {
    id: String,
    backend: Arc<HttpBackend>,
}

impl LiveModel {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        Ok(Self {
            id: config.model_id.clone(),
            backend: Arc::new(HttpBackend::new(config)?),
        })
    }
}

impl ModelUnderTest for LiveModel {
    fn id(&self) -> &str {
        &self.id
    }

    fn backend_for(&self, _task: &EvalTask, _query_index: usize) -> Result<Arc<dyn ChatBackend>, String> {
        Ok(self.backend.clone())
    }
}

/// Adapts any shared backend as a model under test, for custom scripts.
pub struct FixedBackend {
    pub id: String,
    pub backend: Arc<dyn ChatBackend>,
}

impl ModelUnderTest for FixedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn backend_for(&self, _task: &EvalTask, _query_index: usize) -> Result<Arc<dyn ChatBackend>, String> {
        Ok(self.backend.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub max_iterations: usize,
    pub prompt_injection: bool,
    pub base_system: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            prompt_injection: true,
            base_system: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub tool_call_successes: usize,
    pub answer_successes: usize,
    pub total: usize,
}

/// Per-query result, kept for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub model: String,
    pub task: String,
    pub query: usize,
    pub outcome: OutcomeKind,
    pub tool_call_success: bool,
    pub answer_success: bool,
    pub answer: String,
    pub tools_called: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// model id → task name → counts.
    pub rows: IndexMap<String, IndexMap<String, CellCounts>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<QueryRecord>,
}

impl EvalReport {
    pub fn cell(&self, model: &str, task: &str) -> Option<CellCounts> {
        self.rows.get(model)?.get(task).copied()
    }

    /// Adds the rows of `other`; a model present in both keeps `other`'s.
    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.records.extend(other.records);
    }

    /// True when every cell of `model` has all tool calls succeeding.
    pub fn all_tool_calls_succeeded(&self, model: &str) -> bool {
        self.rows
            .get(model)
            .is_some_and(|row| row.values().all(|c| c.tool_call_successes == c.total))
    }
}

fn score(task: &EvalTask, index: usize, outcome: &TurnOutcome) -> (bool, bool) {
    let tool_call = match &task.must_call_tool {
        Some(tool) => outcome.tool_calls.iter().any(|c| &c.tool == tool),
        None => !outcome.tool_calls.is_empty(),
    };
    let answered = outcome.kind == OutcomeKind::FinalAnswer;
    let answer = answered
        && match task.expected(index) {
            Some(subs) => {
                let text = outcome.answer.to_lowercase();
                subs.iter().all(|s| text.contains(&s.to_lowercase()))
            }
            None => true,
        };
    (tool_call, answer)
}

fn task_tools(task: &EvalTask, registry: &Registry) -> ToolList {
    let full = registry.tool_list();
    let specs = full
        .iter()
        .filter(|s| task.tool_names.contains(&s.name))
        .cloned()
        .collect();
    ToolList::new(specs).expect("subset of a valid list")
}

/// Runs every query of `suite` against `model`. Queries of a task run
/// concurrently, each in its own conversation.
pub async fn run_eval(
    suite: &Suite,
    model: &dyn ModelUnderTest,
    registry: &Registry,
    options: &EvalOptions,
) -> Result<EvalReport, SuiteError> {
    suite.check()?;
    suite.check_registered(registry)?;
    let model_id = model.id().to_string();

    let mut backends = Vec::new();
    for task in &suite.tasks {
        let mut per_task = Vec::new();
        for index in 0..task.queries.len() {
            let backend = model.backend_for(task, index).map_err(|message| SuiteError::Model {
                model: model_id.clone(),
                task: task.name.clone(),
                query: index,
                message,
            })?;
            per_task.push(backend);
        }
        backends.push(per_task);
    }

    let mut report = EvalReport::default();
    let row = report.rows.entry(model_id.clone()).or_default();
    for (task, task_backends) in suite.tasks.iter().zip(backends) {
        let tools = task_tools(task, registry);
        let runs = task.queries.iter().zip(task_backends).map(|(query, backend)| {
            let tools = tools.clone();
            let config = ConversationConfig {
                base_system: options.base_system.clone(),
                max_iterations: options.max_iterations,
                prompt_injection: options.prompt_injection,
            };
            async move {
                let mut conversation = Conversation::new(tools, config);
                conversation.run_turn(&query.prompt, backend.as_ref(), registry).await
            }
        });
        let outcomes = futures::future::join_all(runs).await;

        let cell = row.entry(task.name.clone()).or_default();
        for (index, outcome) in outcomes.iter().enumerate() {
            let (tool_call, answer) = score(task, index, outcome);
            cell.total += 1;
            cell.tool_call_successes += usize::from(tool_call);
            cell.answer_successes += usize::from(answer);
            report.records.push(QueryRecord {
                model: model_id.clone(),
                task: task.name.clone(),
                query: index,
                outcome: outcome.kind,
                tool_call_success: tool_call,
                answer_success: answer,
                answer: outcome.answer.clone(),
                tools_called: outcome.tool_calls.iter().map(|c| c.tool.clone()).collect(),
            });
        }
    }
    Ok(report)
}

/// Which count a table shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    ToolCalls,
    Answers,
}

fn columns(report: &EvalReport) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for row in report.rows.values() {
        for task in row.keys() {
            if !seen.contains(task) {
                seen.push(task.clone());
            }
        }
    }
    let rank = |t: &str| TASK_ORDER.iter().position(|o| *o == t).unwrap_or(TASK_ORDER.len());
    // Stable: unknown tasks keep their first-seen order after the known ones.
    seen.sort_by_key(|t| rank(t));
    seen
}

/// One row per model, one column per task, cells holding `metric`.
pub fn render_table(report: &EvalReport, metric: Metric) -> String {
    let cols = columns(report);
    let mut header = vec!["Model".to_string()];
    header.extend(cols.iter().cloned());
    let mut rows = vec![header];
    for (model, cells) in &report.rows {
        let mut row = vec![model.clone()];
        for task in &cols {
            row.push(match cells.get(task) {
                Some(c) => match metric {
                    Metric::ToolCalls => c.tool_call_successes.to_string(),
                    Metric::Answers => c.answer_successes.to_string(),
                },
                None => "-".to_string(),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let line = |row: &[String]| {
        row.iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let rule = widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-");
    let mut out = vec![line(&rows[0]), rule];
    out.extend(rows[1..].iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

/// The tool-call table, optionally followed by the answer table.
pub fn render_report(report: &EvalReport, include_answers: bool) -> String {
    let mut out = String::from("Successful tool calls\n");
    out.push_str(&render_table(report, Metric::ToolCalls));
    if include_answers {
        out.push_str("\nCorrect answers\n");
        out.push_str(&render_table(report, Metric::Answers));
    }
    out
}
