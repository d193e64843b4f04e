//! Built-in task tools: time zones, weather, web search, a python
//! interpreter, local file search, arXiv lookup and knowledge-graph search.
//!
//! Every tool has the same [`ToolSpec`] in fixture and live mode, so prompts
//! are identical either way. Fixture mode answers from files on disk and is
//! deterministic; live mode talks to the real services.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::Deserialize;
use serde_json::Value;

use crate::registry::{Registry, RegistryError, ToolBinding, ToolError};
use crate::schema::{ParamMap, ParameterSchema, PropertySchema, ToolList, ToolSpec};

pub mod arith;
mod clock;
mod files;
mod fixture;
mod interpreter;
mod kg;
mod lookup;

pub use clock::tz_now;
pub use files::file_search;
pub use fixture::{canonical_key, FixtureStore};
pub use interpreter::{Interpreter, InterpreterConfig};
pub use kg::{kg_search, KnowledgeGraph, Triple};
pub use lookup::{LiveEndpoints, Lookup, LookupKind};

pub const TIME_TOOL: &str = "get_time";
pub const WEATHER_TOOL: &str = "get_weather";
pub const SEARCH_TOOL: &str = "google_search";
pub const INTERPRETER_TOOL: &str = crate::extract::INTERPRETER_TOOL;
pub const FILE_SEARCH_TOOL: &str = "file_search";
pub const ARXIV_TOOL: &str = "arxiv_query";
pub const KG_TOOL: &str = "kg_search";

/// Cap for lookup-style tool results, in characters.
pub const LOOKUP_OUTPUT_CAP: usize = 4096;
pub const TRUNCATION_MARKER: &str = "…[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolMode {
    #[default]
    Fixture,
    Live,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    pub mode: ToolMode,
    /// Root of `<tool>/<key>.txt` fixture files.
    pub fixtures: PathBuf,
    /// Directory `file_search` is confined to. Defaults to
    /// `<fixtures>/file_search` in fixture mode and the working directory in
    /// live mode.
    pub files_root: Option<PathBuf>,
    /// Tab-separated triples. Defaults to `<fixtures>/kg_search/graph.tsv`.
    pub knowledge_graph: Option<PathBuf>,
    /// The instant fixture-mode clocks report.
    pub fixed_instant: DateTime<Utc>,
    pub interpreter: InterpreterConfig,
    pub live: LiveEndpoints,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            mode: ToolMode::Fixture,
            fixtures: PathBuf::from("data/fixtures"),
            files_root: None,
            knowledge_graph: None,
            fixed_instant: Utc
                .with_ymd_and_hms(2024, 7, 1, 12, 0, 0)
                .single()
                .expect("valid instant"),
            interpreter: InterpreterConfig::default(),
            live: LiveEndpoints::default(),
        }
    }
}

impl ToolsConfig {
    pub fn fixtures(root: impl Into<PathBuf>) -> Self {
        Self {
            fixtures: root.into(),
            ..Self::default()
        }
    }

    /// Reads a TOML config file (`mode`, `fixtures`, `[interpreter]`, ...).
    pub fn from_toml_file(path: &Path) -> Result<Self, ToolsError> {
        let raw = std::fs::read_to_string(path).map_err(|e| ToolsError::Io(path.into(), e.to_string()))?;
        toml::from_str(&raw).map_err(|e| ToolsError::Config(e.to_string()))
    }

    pub fn files_root(&self) -> PathBuf {
        match (&self.files_root, self.mode) {
            (Some(root), _) => root.clone(),
            (None, ToolMode::Fixture) => self.fixtures.join(FILE_SEARCH_TOOL),
            (None, ToolMode::Live) => PathBuf::from("."),
        }
    }

    pub fn knowledge_graph_path(&self) -> PathBuf {
        self.knowledge_graph
            .clone()
            .unwrap_or_else(|| self.fixtures.join(KG_TOOL).join("graph.tsv"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolsError {
    #[error("no built-in implementation for tool {0:?}")]
    UnknownTool(String),
    #[error("tool {0:?} is an example tool and must not be offered to a model")]
    ExampleTool(String),
    #[error("{0}: {1}")]
    Io(PathBuf, String),
    #[error("invalid tools config: {0}")]
    Config(String),
    #[error("knowledge graph line {line}: {message}")]
    Graph { line: usize, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn string_prop(description: &str) -> PropertySchema {
    PropertySchema::string(description)
}

/// Specs of the seven task tools, in task order.
pub fn builtin_specs() -> ToolList {
    let one = |name: &str, description: &str, param: &str, param_desc: &str| {
        ToolSpec::new(
            name,
            description,
            ParameterSchema::default()
                .property(param, string_prop(param_desc))
                .require(param),
        )
    };
    let specs = vec![
        one(
            TIME_TOOL,
            "Get the current date and time in a time zone",
            "timezone",
            "IANA time zone name, for example: Asia/Shanghai",
        ),
        one(
            WEATHER_TOOL,
            "Get the current weather in a city",
            "city",
            "City name, for example: Paris",
        ),
        one(
            SEARCH_TOOL,
            "Search the web with Google and return the top results",
            "query",
            "Search keywords",
        ),
        one(
            INTERPRETER_TOOL,
            "Run Python code and return everything it prints",
            "code",
            "Complete Python program; use print() to output results",
        ),
        ToolSpec::new(
            FILE_SEARCH_TOOL,
            "Search local files by name pattern, optionally keeping only files that contain some text",
            ParameterSchema::default()
                .property("pattern", string_prop("File name glob, for example: *.md"))
                .property("contains", string_prop("Optional text the file must contain"))
                .property("root", string_prop("Optional sub-directory to search in"))
                .require("pattern"),
        ),
        one(
            ARXIV_TOOL,
            "Search arXiv for relevant papers",
            "query",
            "Search keywords",
        ),
        ToolSpec::new(
            KG_TOOL,
            "Look up facts about an entity in the local knowledge graph",
            ParameterSchema::default()
                .property("entity", string_prop("Entity name, for example: Alice"))
                .property(
                    "relation",
                    string_prop("Optional relation to filter by, for example: knows"),
                )
                .require("entity"),
        ),
    ];
    ToolList::new(specs).expect("built-in specs are valid")
}

/// Shared state behind the built-in executors.
struct Toolbox {
    config: ToolsConfig,
    fixtures: FixtureStore,
    graph: Option<KnowledgeGraph>,
    interpreter: Interpreter,
    lookup: Lookup,
}

impl Toolbox {
    fn load(config: &ToolsConfig) -> Result<Self, ToolsError> {
        let fixtures = if config.mode == ToolMode::Fixture && config.fixtures.is_dir() {
            FixtureStore::load(&config.fixtures)?
        } else {
            FixtureStore::empty(&config.fixtures)
        };
        let graph_path = config.knowledge_graph_path();
        let graph = if graph_path.is_file() {
            Some(KnowledgeGraph::load(&graph_path)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            fixtures,
            graph,
            interpreter: Interpreter::new(config.interpreter.clone()),
            lookup: Lookup::new(config.live.clone()),
        })
    }

    async fn run(&self, tool: &str, params: &ParamMap) -> Result<String, ToolError> {
        let live = self.config.mode == ToolMode::Live;
        let out = match tool {
            TIME_TOOL => {
                let zone = string_param(params, "timezone")?;
                let instant = if live { Utc::now() } else { self.config.fixed_instant };
                tz_now(&zone, instant)?
            }
            WEATHER_TOOL | SEARCH_TOOL | ARXIV_TOOL => {
                let (kind, key) = match tool {
                    WEATHER_TOOL => (LookupKind::Weather, "city"),
                    SEARCH_TOOL => (LookupKind::Search, "query"),
                    _ => (LookupKind::Arxiv, "query"),
                };
                let query = string_param(params, key)?;
                if query.trim().is_empty() {
                    return Err(ToolError::InvalidParameters(format!("{key} is empty")));
                }
                if live {
                    self.lookup.fetch(kind, &query).await?
                } else {
                    self.fixtures.lookup(tool, &query)?.to_string()
                }
            }
            INTERPRETER_TOOL => {
                let code = string_param(params, "code")?;
                return self.interpreter.run(&code).await;
            }
            FILE_SEARCH_TOOL => {
                let pattern = string_param(params, "pattern")?;
                let contains = optional_string_param(params, "contains");
                let sub = optional_string_param(params, "root");
                file_search(&self.config.files_root(), sub.as_deref(), &pattern, contains.as_deref())?
            }
            KG_TOOL => {
                let graph = self.graph.as_ref().ok_or_else(|| {
                    ToolError::Failed(format!(
                        "knowledge graph {} is not loaded",
                        self.config.knowledge_graph_path().display()
                    ))
                })?;
                let entity = string_param(params, "entity")?;
                let relation = optional_string_param(params, "relation");
                kg_search(graph, &entity, relation.as_deref())
            }
            other => return Err(ToolError::Failed(format!("no built-in tool {other:?}"))),
        };
        Ok(cap_output(&out, LOOKUP_OUTPUT_CAP))
    }
}

struct BuiltinExecutor {
    tool: String,
    toolbox: Arc<Toolbox>,
}

#[async_trait::async_trait]
impl crate::registry::ToolExecutor for BuiltinExecutor {
    async fn call(&self, params: &ParamMap) -> Result<String, ToolError> {
        self.toolbox.run(&self.tool, params).await
    }
}

fn is_builtin(name: &str) -> bool {
    matches!(
        name,
        TIME_TOOL | WEATHER_TOOL | SEARCH_TOOL | INTERPRETER_TOOL | FILE_SEARCH_TOOL | ARXIV_TOOL | KG_TOOL
    )
}

/// Registers every built-in tool.
pub fn builtin_registry(config: &ToolsConfig) -> Result<Registry, ToolsError> {
    registry_for(&builtin_specs(), config)
}

/// Binds each spec in `tools` to the built-in implementation of the same
/// name. Descriptions may differ from [`builtin_specs`]; names may not.
pub fn registry_for(tools: &ToolList, config: &ToolsConfig) -> Result<Registry, ToolsError> {
    for name in tools.names() {
        if arith::is_example_tool(name) {
            return Err(ToolsError::ExampleTool(name.to_string()));
        }
        if !is_builtin(name) {
            return Err(ToolsError::UnknownTool(name.to_string()));
        }
    }
    let toolbox = Arc::new(Toolbox::load(config)?);
    let interpreter_timeout = Duration::from_secs_f64(config.interpreter.timeout_s) + Duration::from_secs(5);
    let mut registry = Registry::new();
    for spec in tools {
        let mut binding = ToolBinding::new(
            spec.clone(),
            BuiltinExecutor {
                tool: spec.name.clone(),
                toolbox: toolbox.clone(),
            },
        );
        if spec.name == INTERPRETER_TOOL {
            let timeout = interpreter_timeout.max(binding.timeout);
            binding = binding.with_timeout(timeout);
        }
        registry.register(binding)?;
    }
    Ok(registry)
}

/// Reads a parameter as text. Numbers and booleans are rendered.
pub fn string_param(params: &ParamMap, name: &str) -> Result<String, ToolError> {
    optional_string_param(params, name)
        .ok_or_else(|| ToolError::InvalidParameters(format!("parameter {name:?} must be a string")))
}

fn optional_string_param(params: &ParamMap, name: &str) -> Option<String> {
    match params.get(name)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Truncates to at most `cap` characters, ending with [`TRUNCATION_MARKER`]
/// when anything was cut.
pub fn cap_output(text: &str, cap: usize) -> String {
    if text.chars().count() <= cap {
        return text.to_string();
    }
    let keep = cap.saturating_sub(TRUNCATION_MARKER.chars().count());
    let mut out: String = text.chars().take(keep).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}
