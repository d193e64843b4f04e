//! The feedback loop: query the backend, extract a tool call (or python
//! fence), dispatch it, append the observation, and repeat until the model
//! answers in plain text or the iteration bound is hit.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{BackendError, ChatBackend};
use crate::extract::{reconstruct_invocation_text, scan_code_fence, scan_tool_invocation, ToolInvocation};
use crate::promptgen::build_system_prompt;
use crate::registry::Registry;
use crate::schema::{ChatMessage, ParamMap, Role, ToolList};

pub const DEFAULT_MAX_ITERATIONS: usize = 8;

/// The user-role message that carries a tool result to backends which
/// reject the observation role.
pub fn format_fallback_feedback(tool: &str, results: &str) -> String {
    format!(
        "Call{tool}The result returned by the tool is:{results}. Please continue to answer my previous question based on the result returned by the tool."
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PromptInstalled,
    User,
    Completion,
    Diagnostic,
    Dispatch,
    FinalAnswer,
    IterationLimit,
    BackendError,
    Rollback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub kind: EventKind,
    pub payload: Value,
}

/// Append-only audit log of a conversation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn record(&mut self, kind: EventKind, payload: Value) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        self.events.push(TranscriptEvent { ts, kind, payload });
    }

    pub fn events(&self) -> &[TranscriptEvent] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TranscriptEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One `{"ts", "kind", "payload"}` JSON record per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationConfig {
    pub base_system: Option<String>,
    pub max_iterations: usize,
    pub prompt_injection: bool,
}

impl Default for ConversationConfig {
    fn default() -> Self {
        Self {
            base_system: None,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            prompt_injection: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    FinalAnswer,
    IterationLimit,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool: String,
    pub parameters: ParamMap,
    pub observation: String,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutcome {
    pub kind: OutcomeKind,
    /// The model's direct reply. Empty unless `kind` is `FinalAnswer`.
    pub answer: String,
    /// Last text the model produced, kept for the non-final outcomes.
    pub last_response: Option<String>,
    pub tool_calls: Vec<ToolCallRecord>,
    pub error: Option<BackendError>,
}

impl TurnOutcome {
    pub fn is_final(&self) -> bool {
        self.kind == OutcomeKind::FinalAnswer
    }
}

/// One conversation's state. All mutation happens in [`Conversation::run_turn`]
/// and [`Conversation::toggle_prompt_injection`].
#[derive(Debug, Clone)]
pub struct Conversation {
    messages: Vec<ChatMessage>,
    tools: ToolList,
    base_system: Option<String>,
    iteration_count: usize,
    max_iterations: usize,
    prompt_injection_enabled: bool,
    transcript: Transcript,
}

impl Conversation {
    pub fn new(tools: ToolList, config: ConversationConfig) -> Self {
        Self::with_history(tools, config, Vec::new())
    }

    /// Resumes from prior non-system turns (e.g. a client-supplied history).
    pub fn with_history(tools: ToolList, config: ConversationConfig, prior: Vec<ChatMessage>) -> Self {
        assert!(config.max_iterations >= 1, "max_iterations must be positive");
        let mut conv = Self {
            messages: prior.into_iter().filter(|m| m.role != Role::System).collect(),
            tools,
            base_system: config.base_system,
            iteration_count: 0,
            max_iterations: config.max_iterations,
            prompt_injection_enabled: config.prompt_injection,
            transcript: Transcript::default(),
        };
        conv.install_system_prompt();
        conv
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn tools(&self) -> &ToolList {
        &self.tools
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn iteration_count(&self) -> usize {
        self.iteration_count
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn prompt_injection_enabled(&self) -> bool {
        self.prompt_injection_enabled
    }

    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    /// Switches between the tool-describing system prompt and the base one.
    pub fn toggle_prompt_injection(&mut self, enabled: bool) {
        self.prompt_injection_enabled = enabled;
        self.install_system_prompt();
    }

    fn install_system_prompt(&mut self) {
        let tools = self.prompt_injection_enabled.then_some(&self.tools);
        let prompt = build_system_prompt(tools, self.base_system.as_deref());
        if self.messages.first().is_some_and(|m| m.role == Role::System) {
            self.messages.remove(0);
        }
        if !prompt.is_empty() {
            self.messages.insert(0, ChatMessage::system(prompt));
        }
        self.transcript.record(
            EventKind::PromptInstalled,
            json!({
                "prompt_injection": self.prompt_injection_enabled,
                "tools": self.tools.names().collect::<Vec<_>>(),
            }),
        );
    }

    /// Runs one user turn to completion. See the module docs for the cycle.
    ///
    /// A backend failure rolls the conversation back to its state before the
    /// turn, so the same prompt can be retried.
    pub async fn run_turn(&mut self, user_prompt: &str, backend: &dyn ChatBackend, registry: &Registry) -> TurnOutcome {
        let checkpoint = self.messages.len();
        self.iteration_count = 0;
        let prompt = user_prompt.trim();
        self.messages.push(ChatMessage::user(prompt));
        self.transcript.record(EventKind::User, json!({"content": prompt}));

        let mut tool_calls = Vec::new();
        loop {
            let response = match backend.complete(&self.messages).await {
                Ok(text) if text.trim().is_empty() => Err(BackendError::Malformed("empty assistant message".into())),
                other => other,
            };
            let response = match response {
                Ok(text) => text,
                Err(err) => {
                    self.transcript
                        .record(EventKind::BackendError, json!({"error": err.to_string()}));
                    self.messages.truncate(checkpoint);
                    self.iteration_count = 0;
                    self.transcript.record(
                        EventKind::Rollback,
                        json!({"messages": checkpoint, "tool_calls_discarded": tool_calls.len()}),
                    );
                    return TurnOutcome {
                        kind: OutcomeKind::BackendError,
                        answer: String::new(),
                        last_response: None,
                        tool_calls,
                        error: Some(err),
                    };
                }
            };
            self.transcript
                .record(EventKind::Completion, json!({"content": response}));

            let Some((invocation, source)) = self.next_invocation(&response) else {
                self.messages.push(ChatMessage::assistant(response.clone()));
                self.transcript
                    .record(EventKind::FinalAnswer, json!({"content": response}));
                return TurnOutcome {
                    kind: OutcomeKind::FinalAnswer,
                    answer: response,
                    last_response: None,
                    tool_calls,
                    error: None,
                };
            };

            if self.iteration_count >= self.max_iterations {
                self.transcript.record(
                    EventKind::IterationLimit,
                    json!({
                        "max_iterations": self.max_iterations,
                        "note": format!(
                            "stopped after {} tool call(s); the model kept requesting tools",
                            self.iteration_count
                        ),
                        "last_response": response,
                    }),
                );
                return TurnOutcome {
                    kind: OutcomeKind::IterationLimit,
                    answer: String::new(),
                    last_response: Some(response),
                    tool_calls,
                    error: None,
                };
            }

            let call_text = reconstruct_invocation_text(&invocation);
            self.messages.push(ChatMessage::assistant(call_text));
            let result = registry.dispatch(&invocation.tool, &invocation.parameters).await;
            self.messages.push(ChatMessage::observation(result.content.clone()));
            self.iteration_count += 1;
            self.transcript.record(
                EventKind::Dispatch,
                json!({
                    "source": source,
                    "tool": invocation.tool,
                    "parameters": invocation.parameters,
                    "ok": result.ok,
                    "observation": result.content,
                    "elapsed_ms": result.elapsed.as_millis() as u64,
                }),
            );
            tool_calls.push(ToolCallRecord {
                tool: invocation.tool,
                parameters: invocation.parameters,
                observation: result.content,
                ok: result.ok,
            });
        }
    }

    // Tool object first, then python fence.
    fn next_invocation(&mut self, response: &str) -> Option<(ToolInvocation, &'static str)> {
        let tool_scan = scan_tool_invocation(response);
        for d in &tool_scan.diagnostics {
            self.transcript
                .record(EventKind::Diagnostic, json!({"offset": d.offset, "message": d.message}));
        }
        let fence_scan = scan_code_fence(response);
        if let Some(inv) = tool_scan.found {
            if fence_scan.found.is_some() {
                self.transcript.record(
                    EventKind::Diagnostic,
                    json!({"message": "response holds both a tool object and a python fence; the tool object is processed first"}),
                );
            }
            return Some((inv, "tool_json"));
        }
        for d in &fence_scan.diagnostics {
            self.transcript
                .record(EventKind::Diagnostic, json!({"offset": d.offset, "message": d.message}));
        }
        fence_scan.found.map(|code| (code.to_tool_invocation(), "python_fence"))
    }
}
