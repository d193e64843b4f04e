//! Prompt-level tool calling for chat-completion backends that lack native
//! function calling.
//!
//! The pieces, bottom up:
//! - [`schema`]: tool descriptions and chat messages.
//! - [`promptgen`]: the system-prompt instruction block.
//! - [`extract`]: finding tool calls and python fences in model output.
//! - [`registry`]: tool bindings and total dispatch.
//! - [`backend`]: HTTP and scripted chat backends.
//! - [`agent`]: the extract / dispatch / feedback loop.
//! - [`tools`]: the built-in task tools.
//! - [`proxy`]: an OpenAI-compatible endpoint applying the loop server-side.
//! - [`eval`]: task suites, scripted model personas and success-count reports.

pub mod agent;
pub mod backend;
pub mod eval;
pub mod extract;
pub mod promptgen;
pub mod proxy;
pub mod registry;
pub mod schema;
pub mod tools;

pub use agent::{format_fallback_feedback, Conversation, ConversationConfig, OutcomeKind, TurnOutcome};
pub use backend::{BackendConfig, BackendError, ChatBackend, HttpBackend, ScriptedBackend};
pub use extract::{
    extract_code_fence, extract_tool_invocation, reconstruct_invocation_text, CodeInvocation, ToolInvocation,
};
pub use promptgen::{build_system_prompt, build_tool_instructions, InstructionBlock};
pub use registry::{DispatchResult, Registry, ToolBinding, ToolError};
pub use schema::{parse_tool_list, ChatMessage, ParamMap, Role, ToolList, ToolSpec};
