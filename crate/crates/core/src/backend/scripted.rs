use std::fmt;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;

use super::{prepare_history, BackendError, ChatBackend};
use crate::extract::{to_spaced_json, ToolInvocation, INTERPRETER_TOOL};
use crate::schema::{ChatMessage, ParamMap, Role, ToolList};

pub type Matcher = Arc<dyn Fn(&[ChatMessage]) -> bool + Send + Sync>;

pub const OBSERVATION_PLACEHOLDER: &str = "{{observation}}";

fn last_observation(history: &[ChatMessage]) -> &str {
    history
        .iter()
        .rev()
        .find(|m| m.role == Role::Observation)
        .map(|m| m.content.as_str())
        .unwrap_or("")
}

type ReplyFn = Arc<dyn Fn(&[ChatMessage]) -> String + Send + Sync>;

/// What a script step answers with.
#[derive(Clone)]
pub enum Reply {
    Text(String),
    /// Computed from the history the backend was given (before any
    /// observation-role rewriting).
    Dynamic(ReplyFn),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }

    /// `prefix` followed by the content of the most recent observation.
    pub fn echo_last_observation(prefix: impl Into<String>) -> Self {
        let prefix = prefix.into();
        Reply::Dynamic(Arc::new(move |history| {
            format!("{prefix}{}", last_observation(history))
        }))
    }

    /// `text` with every `{{observation}}` replaced by the most recent
    /// observation. Plain text when the placeholder is absent.
    pub fn template(text: impl Into<String>) -> Self {
        let text = text.into();
        if !text.contains(OBSERVATION_PLACEHOLDER) {
            return Reply::Text(text);
        }
        Reply::Dynamic(Arc::new(move |history| {
            text.replace(OBSERVATION_PLACEHOLDER, last_observation(history))
        }))
    }

    fn render(&self, history: &[ChatMessage]) -> String {
        match self {
            Reply::Text(s) => s.clone(),
            Reply::Dynamic(f) => f(history),
        }
    }
}

impl fmt::Debug for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Text(s) => f.debug_tuple("Text").field(s).finish(),
            Reply::Dynamic(_) => f.write_str("Dynamic(..)"),
        }
    }
}

impl From<&str> for Reply {
    fn from(s: &str) -> Self {
        Reply::Text(s.to_string())
    }
}

impl From<String> for Reply {
    fn from(s: String) -> Self {
        Reply::Text(s)
    }
}

#[derive(Clone)]
pub struct ScriptStep {
    pub matcher: Option<Matcher>,
    pub reply: Reply,
}

impl ScriptStep {
    pub fn always(reply: impl Into<Reply>) -> Self {
        Self {
            matcher: None,
            reply: reply.into(),
        }
    }

    pub fn when<F>(matcher: F, reply: impl Into<Reply>) -> Self
    where
        F: Fn(&[ChatMessage]) -> bool + Send + Sync + 'static,
    {
        Self {
            matcher: Some(Arc::new(matcher)),
            reply: reply.into(),
        }
    }

    fn matches(&self, history: &[ChatMessage]) -> bool {
        self.matcher.as_ref().is_none_or(|m| m(history))
    }
}

impl fmt::Debug for ScriptStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptStep")
            .field("conditional", &self.matcher.is_some())
            .field("reply", &self.reply)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMode {
    /// Steps are consumed strictly in order. Running out is an error.
    Sequential,
    /// Every call answers with the first step whose matcher accepts the
    /// history. Steps are never consumed.
    MatchBased,
}

/// Deterministic stand-in for a model. One instance serves one conversation.
#[derive(Debug)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    mode: ScriptMode,
    observation_role_supported: bool,
    cursor: Mutex<usize>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedBackend {
    pub fn new(mode: ScriptMode, steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            mode,
            observation_role_supported: true,
            cursor: Mutex::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Plain replies, consumed in order.
    pub fn sequential<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<Reply>,
    {
        Self::new(
            ScriptMode::Sequential,
            replies.into_iter().map(ScriptStep::always).collect(),
        )
    }

    pub fn match_based(steps: Vec<ScriptStep>) -> Self {
        Self::new(ScriptMode::MatchBased, steps)
    }

    pub fn with_observation_role(mut self, supported: bool) -> Self {
        self.observation_role_supported = supported;
        self
    }

    /// Every history this backend was sent, after role rewriting.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().expect("requests lock").clone()
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().expect("requests lock").len()
    }

    pub fn remaining(&self) -> usize {
        match self.mode {
            ScriptMode::Sequential => self.steps.len() - *self.cursor.lock().expect("cursor lock"),
            ScriptMode::MatchBased => usize::MAX,
        }
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn complete(&self, history: &[ChatMessage]) -> Result<String, BackendError> {
        if history.is_empty() {
            return Err(BackendError::EmptyHistory);
        }
        let wire = prepare_history(history, self.observation_role_supported).into_owned();
        self.requests.lock().expect("requests lock").push(wire);
        let step = match self.mode {
            ScriptMode::Sequential => {
                let mut cursor = self.cursor.lock().expect("cursor lock");
                let step = self
                    .steps
                    .get(*cursor)
                    .ok_or(BackendError::ScriptExhausted(self.steps.len()))?;
                if !step.matches(history) {
                    return Err(BackendError::NoMatch);
                }
                *cursor += 1;
                step
            }
            ScriptMode::MatchBased => self
                .steps
                .iter()
                .find(|s| s.matches(history))
                .ok_or(BackendError::NoMatch)?,
        };
        Ok(step.reply.render(history))
    }
}

/// One scripted task: the call a cooperative model would make and the
/// observation it expects back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskFixture {
    pub tool: String,
    pub parameters: ParamMap,
    pub observation: String,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("fixture names no tool")]
    Empty,
    #[error("fixture tool {0:?} is not in the tool list")]
    UnknownTool(String),
    #[error("interpreter fixture needs a string `code` parameter")]
    MissingCode,
}

/// Text a cooperative model emits to make `tool` call. Interpreter calls
/// are emitted as a python fence.
pub fn invocation_reply(tool: &str, parameters: &ParamMap) -> Result<String, FixtureError> {
    if tool == INTERPRETER_TOOL {
        let code = parameters
            .get("code")
            .and_then(|c| c.as_str())
            .ok_or(FixtureError::MissingCode)?;
        Ok(format!("```python\n{code}\n```"))
    } else {
        let inv = ToolInvocation::synthetic(tool, parameters.clone());
        Ok(format!("```tool_json\n{}\n```", inv.raw_text))
    }
}

/// The canonical two-response script: a tool call, then an answer quoting
/// the fixture's observation.
pub fn scripted_tool_flow(fixture: &TaskFixture, tools: &ToolList) -> Result<ScriptedBackend, FixtureError> {
    if fixture.tool.is_empty() {
        return Err(FixtureError::Empty);
    }
    if tools.get(&fixture.tool).is_none() {
        return Err(FixtureError::UnknownTool(fixture.tool.clone()));
    }
    let call = invocation_reply(&fixture.tool, &fixture.parameters)?;
    let answer = format!(
        "According to {} with {}, the result is: {}",
        fixture.tool,
        to_spaced_json(&serde_json::Value::Object(fixture.parameters.clone())),
        fixture.observation
    );
    Ok(ScriptedBackend::sequential([call, answer]))
}
