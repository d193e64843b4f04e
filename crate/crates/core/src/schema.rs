//! Tool-description wire format and the chat-message model.
//!
//! A tool list is a JSON array whose entries are either the wrapped form
//! `{"type": "function", "function": {...}}` or the bare `{"name": ...}` form.
//! Both are accepted on input; [`ToolList::to_json`] always emits the wrapped
//! form.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Named parameter values as the model emitted them. Values keep their JSON
/// type; individual tools coerce as needed.
pub type ParamMap = Map<String, Value>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("malformed tool list JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("tool list entry {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("duplicate tool name {name:?} at entries {first} and {second}")]
    DuplicateName { name: String, first: usize, second: usize },
}

/// A call was missing one or more required parameters.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("tool {tool:?} is missing required parameter(s): {}", missing.join(", "))]
pub struct ValidationError {
    pub tool: String,
    pub missing: Vec<String>,
}

/// One property of a tool's parameter object.
///
/// Only `type`, `description` and `default` are interpreted. Anything else
/// (`enum`, nested `properties`, `items`, ...) is carried through untouched.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PropertySchema {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl PropertySchema {
    pub fn string(description: impl Into<String>) -> Self {
        Self {
            kind: Some("string".into()),
            description: Some(description.into()),
            ..Self::default()
        }
    }

    pub fn with_default(mut self, value: impl Into<Value>) -> Self {
        self.default = Some(value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchema {
    #[serde(rename = "type", default = "object_type")]
    pub kind: String,
    #[serde(default)]
    pub properties: indexmap::IndexMap<String, PropertySchema>,
    #[serde(default)]
    pub required: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn object_type() -> String {
    "object".to_string()
}

impl Default for ParameterSchema {
    fn default() -> Self {
        Self {
            kind: object_type(),
            properties: Default::default(),
            required: Vec::new(),
            extra: Map::new(),
        }
    }
}

impl ParameterSchema {
    pub fn property(mut self, name: impl Into<String>, schema: PropertySchema) -> Self {
        self.properties.insert(name.into(), schema);
        self
    }

    pub fn require(mut self, name: impl Into<String>) -> Self {
        self.required.push(name.into());
        self
    }

    fn check(&self) -> Result<(), String> {
        if self.kind != "object" {
            return Err(format!("parameters.type must be \"object\", found {:?}", self.kind));
        }
        for name in &self.required {
            if !self.properties.contains_key(name) {
                return Err(format!(
                    "required parameter {name:?} is not declared in parameters.properties"
                ));
            }
        }
        Ok(())
    }
}

/// Machine-readable description of one callable tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: ParameterSchema,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, parameters: ParameterSchema) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters,
        }
    }

    pub fn required(&self) -> &[String] {
        &self.parameters.required
    }

    /// Checks the per-spec invariants: a usable name and a well-formed
    /// parameter object.
    pub fn check(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("tool name is empty".into());
        }
        if self.name.chars().any(char::is_whitespace) {
            return Err(format!("tool name {:?} contains whitespace", self.name));
        }
        self.parameters.check()
    }

    /// Accepts the call if every required parameter is present and non-null.
    /// Extra parameters pass through; values are never modified.
    pub fn validate_parameters<'a>(&self, params: &'a ParamMap) -> Result<&'a ParamMap, ValidationError> {
        let missing: Vec<String> = self
            .required()
            .iter()
            .filter(|name| params.get(name.as_str()).is_none_or(Value::is_null))
            .cloned()
            .collect();
        if missing.is_empty() {
            Ok(params)
        } else {
            Err(ValidationError {
                tool: self.name.clone(),
                missing,
            })
        }
    }
}

/// Free-function form of [`ToolSpec::validate_parameters`].
pub fn validate_parameters<'a>(spec: &ToolSpec, params: &'a ParamMap) -> Result<&'a ParamMap, ValidationError> {
    spec.validate_parameters(params)
}

/// Ordered tool specs with pairwise-distinct names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolList {
    tools: Vec<ToolSpec>,
}

impl ToolList {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, SchemaError> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (index, spec) in tools.iter().enumerate() {
            spec.check().map_err(|message| SchemaError::Schema { index, message })?;
            if let Some(first) = seen.insert(spec.name.as_str(), index) {
                return Err(SchemaError::DuplicateName {
                    name: spec.name.clone(),
                    first,
                    second: index,
                });
            }
        }
        Ok(Self { tools })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ToolSpec> {
        self.tools.iter()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.tools
    }

    /// The wrapped wire form: `[{"type": "function", "function": {...}}, ...]`.
    pub fn to_value(&self) -> Value {
        Value::Array(
            self.tools
                .iter()
                .map(|spec| {
                    serde_json::json!({
                        "type": "function",
                        "function": spec,
                    })
                })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("tool list serializes")
    }

    /// Parses an already-decoded JSON value (array or `{"tools": [...]}`).
    pub fn from_value(value: &Value) -> Result<Self, SchemaError> {
        let entries = match value {
            Value::Array(items) => items,
            Value::Object(obj) => match obj.get("tools") {
                Some(Value::Array(items)) => items,
                _ => {
                    return Err(SchemaError::Schema {
                        index: 0,
                        message: "expected a JSON array of tools".into(),
                    })
                }
            },
            _ => {
                return Err(SchemaError::Schema {
                    index: 0,
                    message: "expected a JSON array of tools".into(),
                })
            }
        };

        let mut tools = Vec::with_capacity(entries.len());
        for (index, entry) in entries.iter().enumerate() {
            let obj = entry.as_object().ok_or_else(|| SchemaError::Schema {
                index,
                message: "entry is not an object".into(),
            })?;
            let body = match obj.get("function") {
                Some(function) => function,
                None if obj.contains_key("name") => entry,
                None => {
                    return Err(SchemaError::Schema {
                        index,
                        message: "entry has neither a `function` member nor a `name`".into(),
                    })
                }
            };
            if body.get("name").is_none() {
                return Err(SchemaError::Schema {
                    index,
                    message: "tool is missing `name`".into(),
                });
            }
            let spec: ToolSpec = serde_json::from_value(body.clone()).map_err(|e| SchemaError::Schema {
                index,
                message: e.to_string(),
            })?;
            tools.push(spec);
        }
        Self::new(tools)
    }
}

impl<'a> IntoIterator for &'a ToolList {
    type Item = &'a ToolSpec;
    type IntoIter = std::slice::Iter<'a, ToolSpec>;

    fn into_iter(self) -> Self::IntoIter {
        self.tools.iter()
    }
}

/// Parses the tool-list file format.
pub fn parse_tool_list(raw: &str) -> Result<ToolList, SchemaError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| SchemaError::Parse {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    ToolList::from_value(&value)
}

// serde_json reports 1-based line and column.
pub(crate) fn byte_offset(raw: &str, line: usize, column: usize) -> usize {
    let line_start: usize = raw
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(raw.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Observation,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Observation => "observation",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            "observation" => Ok(Role::Observation),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn observation(content: impl Into<String>) -> Self {
        Self::new(Role::Observation, content)
    }
}
