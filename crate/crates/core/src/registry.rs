//! Executable tool bindings and total dispatch.
//!
//! [`Registry::dispatch`] never fails: every failure is encoded as a
//! [`DispatchResult`] whose content starts with `ERROR <code>: `, so the loop
//! can feed it back to the model like any other observation.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use indexmap::IndexMap;

use crate::schema::{ParamMap, ToolList, ToolSpec};

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);

/// Stable failure codes carried in `ERROR <code>: ...` messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureCode {
    UnknownTool,
    InvalidParameters,
    ToolFailed,
    Timeout,
}

impl FailureCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCode::UnknownTool => "unknown_tool",
            FailureCode::InvalidParameters => "invalid_parameters",
            FailureCode::ToolFailed => "tool_failed",
            FailureCode::Timeout => "timeout",
        }
    }

    pub fn from_content(content: &str) -> Option<Self> {
        let rest = content.strip_prefix("ERROR ")?;
        let code = rest.split(':').next()?;
        [
            FailureCode::UnknownTool,
            FailureCode::InvalidParameters,
            FailureCode::ToolFailed,
            FailureCode::Timeout,
        ]
        .into_iter()
        .find(|c| c.as_str() == code)
    }
}

impl fmt::Display for FailureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error returned by a tool implementation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("{0}")]
    InvalidParameters(String),
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Timeout(String),
}

impl ToolError {
    pub fn code(&self) -> FailureCode {
        match self {
            ToolError::InvalidParameters(_) => FailureCode::InvalidParameters,
            ToolError::Failed(_) => FailureCode::ToolFailed,
            ToolError::Timeout(_) => FailureCode::Timeout,
        }
    }
}

/// Formats a single-line failure message.
pub fn failure_message(code: FailureCode, detail: &str) -> String {
    let detail = detail
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" | ");
    format!("ERROR {code}: {detail}")
}

#[async_trait]
pub trait ToolExecutor: Send + Sync {
    async fn call(&self, params: &ParamMap) -> Result<String, ToolError>;
}

/// Adapts a synchronous closure into a [`ToolExecutor`].
pub struct FnExecutor<F>(pub F);

#[async_trait]
impl<F> ToolExecutor for FnExecutor<F>
where
    F: Fn(&ParamMap) -> Result<String, ToolError> + Send + Sync,
{
    async fn call(&self, params: &ParamMap) -> Result<String, ToolError> {
        (self.0)(params)
    }
}

#[derive(Clone)]
pub struct ToolBinding {
    pub spec: ToolSpec,
    pub executor: Arc<dyn ToolExecutor>,
    pub timeout: Duration,
}

impl ToolBinding {
    pub fn new(spec: ToolSpec, executor: impl ToolExecutor + 'static) -> Self {
        Self {
            spec,
            executor: Arc::new(executor),
            timeout: DEFAULT_TOOL_TIMEOUT,
        }
    }

    pub fn from_fn<F>(spec: ToolSpec, f: F) -> Self
    where
        F: Fn(&ParamMap) -> Result<String, ToolError> + Send + Sync + 'static,
    {
        Self::new(spec, FnExecutor(f))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl fmt::Debug for ToolBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolBinding")
            .field("name", &self.spec.name)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchResult {
    pub ok: bool,
    pub content: String,
    pub elapsed: Duration,
}

impl DispatchResult {
    pub fn failure_code(&self) -> Option<FailureCode> {
        if self.ok {
            None
        } else {
            FailureCode::from_content(&self.content)
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("a tool named {0:?} is already registered")]
    Duplicate(String),
    #[error("invalid tool spec {name:?}: {message}")]
    InvalidSpec { name: String, message: String },
}

/// Tools by name, in registration order.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    bindings: IndexMap<String, ToolBinding>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, binding: ToolBinding) -> Result<(), RegistryError> {
        binding.spec.check().map_err(|message| RegistryError::InvalidSpec {
            name: binding.spec.name.clone(),
            message,
        })?;
        if self.bindings.contains_key(&binding.spec.name) {
            return Err(RegistryError::Duplicate(binding.spec.name.clone()));
        }
        self.bindings.insert(binding.spec.name.clone(), binding);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolBinding> {
        self.bindings.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    /// The specs of every registered tool, in registration order.
    pub fn tool_list(&self) -> ToolList {
        ToolList::new(self.bindings.values().map(|b| b.spec.clone()).collect())
            .expect("registered specs are validated and unique")
    }

    /// Validates and runs one call. Never fails; see [`FailureCode`].
    pub async fn dispatch(&self, name: &str, params: &ParamMap) -> DispatchResult {
        let started = Instant::now();
        let outcome = self.dispatch_inner(name, params).await;
        let (ok, content) = match outcome {
            Ok(output) if output.is_empty() => (true, "(no output)".to_string()),
            Ok(output) => (true, output),
            Err((code, detail)) => (false, failure_message(code, &detail)),
        };
        DispatchResult {
            ok,
            content,
            elapsed: started.elapsed(),
        }
    }

    async fn dispatch_inner(&self, name: &str, params: &ParamMap) -> Result<String, (FailureCode, String)> {
        let binding = self
            .bindings
            .get(name)
            .ok_or_else(|| (FailureCode::UnknownTool, format!("no tool named {name:?} is available")))?;
        binding
            .spec
            .validate_parameters(params)
            .map_err(|e| (FailureCode::InvalidParameters, e.to_string()))?;
        match tokio::time::timeout(binding.timeout, binding.executor.call(params)).await {
            Ok(Ok(output)) => Ok(output),
            Ok(Err(e)) => Err((e.code(), e.to_string())),
            Err(_) => Err((
                FailureCode::Timeout,
                format!(
                    "tool {name:?} did not finish within {:.1}s",
                    binding.timeout.as_secs_f64()
                ),
            )),
        }
    }
}
