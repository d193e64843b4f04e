//! Locating tool invocations and python code fences in free-form model text.
//!
//! A tool invocation is anchored the same way a regex for
//! `\{\s*"tool":\s*"` would anchor it. From the anchor the object is delimited
//! by balanced-brace scanning that skips string literals and escapes, so
//! nested `parameters` objects are captured whole.

use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::schema::ParamMap;

/// Tool name used for code extracted from python fences.
pub const INTERPRETER_TOOL: &str = "interpreter";

static TOOL_ANCHOR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"\{\s*"tool":\s*""#).expect("anchor regex"));

const PYTHON_FENCE_OPEN: &str = "```python\n";
const FENCE_CLOSE: &str = "\n```";

/// A tool call found in model output.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolInvocation {
    pub tool: String,
    pub parameters: ParamMap,
    /// Byte range of `raw_text` within the source.
    pub raw_span: Range<usize>,
    pub raw_text: String,
}

impl ToolInvocation {
    /// An invocation not tied to any source text.
    pub fn synthetic(tool: impl Into<String>, parameters: ParamMap) -> Self {
        let mut inv = Self {
            tool: tool.into(),
            parameters,
            raw_span: 0..0,
            raw_text: String::new(),
        };
        inv.raw_text = reconstruct_invocation_text(&inv);
        inv.raw_span = 0..inv.raw_text.len();
        inv
    }
}

/// A python-tagged fenced block found in model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeInvocation {
    pub code: String,
    pub raw_span: Range<usize>,
}

impl CodeInvocation {
    pub fn fence_lang(&self) -> &'static str {
        "python"
    }

    /// The equivalent `interpreter` tool call, with the code escaped as a
    /// JSON string so the reconstructed text stays parseable.
    pub fn to_tool_invocation(&self) -> ToolInvocation {
        let mut params = Map::new();
        params.insert("code".into(), Value::String(self.code.clone()));
        ToolInvocation::synthetic(INTERPRETER_TOOL, params)
    }
}

/// Why an anchored candidate was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub offset: usize,
    pub message: String,
}

/// Result of an extraction pass: at most one invocation plus any candidates
/// that were rejected along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction<T> {
    pub found: Option<T>,
    pub diagnostics: Vec<Diagnostic>,
}

impl<T> Default for Extraction<T> {
    fn default() -> Self {
        Self {
            found: None,
            diagnostics: Vec::new(),
        }
    }
}

/// Returns the first well-formed tool invocation in reading order.
pub fn extract_tool_invocation(text: &str) -> Option<ToolInvocation> {
    scan_tool_invocation(text).found
}

/// Like [`extract_tool_invocation`], also reporting rejected candidates.
pub fn scan_tool_invocation(text: &str) -> Extraction<ToolInvocation> {
    let mut diagnostics = Vec::new();
    for anchor in TOOL_ANCHOR.find_iter(text) {
        let start = anchor.start();
        let Some(end) = balanced_object_end(text, start) else {
            diagnostics.push(Diagnostic {
                offset: start,
                message: "tool object braces never balance".into(),
            });
            continue;
        };
        let raw = &text[start..end];
        match parse_invocation_object(raw) {
            Ok((tool, parameters)) => {
                return Extraction {
                    found: Some(ToolInvocation {
                        tool,
                        parameters,
                        raw_span: start..end,
                        raw_text: raw.to_string(),
                    }),
                    diagnostics,
                };
            }
            Err(message) => diagnostics.push(Diagnostic { offset: start, message }),
        }
    }
    Extraction {
        found: None,
        diagnostics,
    }
}

/// Parses text that should be exactly one `{"tool": ..., "parameters": {...}}`
/// object.
pub fn parse_invocation_object(raw: &str) -> Result<(String, ParamMap), String> {
    let value: Value = serde_json::from_str(raw).map_err(|e| format!("tool object is not valid JSON: {e}"))?;
    let Value::Object(mut obj) = value else {
        return Err("tool object is not a JSON object".into());
    };
    if obj.len() != 2 {
        return Err(format!(
            "tool object must have exactly the keys \"tool\" and \"parameters\", found {}",
            obj.len()
        ));
    }
    let tool = match obj.remove("tool") {
        Some(Value::String(name)) => name,
        Some(_) => return Err("\"tool\" is not a string".into()),
        None => return Err("missing \"tool\"".into()),
    };
    let parameters = match obj.remove("parameters") {
        Some(Value::Object(params)) => params,
        Some(_) => return Err("\"parameters\" is not an object".into()),
        None => return Err("missing \"parameters\"".into()),
    };
    Ok((tool, parameters))
}

/// Given `text[start] == '{'`, returns the index one past the matching `}`.
/// String literals and backslash escapes inside them are skipped.
fn balanced_object_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    debug_assert_eq!(bytes.get(start), Some(&b'{'));
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Returns the first ```` ```python ```` fenced block, inner text only.
pub fn extract_code_fence(text: &str) -> Option<CodeInvocation> {
    scan_code_fence(text).found
}

pub fn scan_code_fence(text: &str) -> Extraction<CodeInvocation> {
    let Some(open) = text.find(PYTHON_FENCE_OPEN) else {
        return Extraction::default();
    };
    let body_start = open + PYTHON_FENCE_OPEN.len();
    match text[body_start..].find(FENCE_CLOSE) {
        Some(rel) => {
            let body_end = body_start + rel;
            Extraction {
                found: Some(CodeInvocation {
                    code: text[body_start..body_end].to_string(),
                    raw_span: open..body_end + FENCE_CLOSE.len(),
                }),
                diagnostics: Vec::new(),
            }
        }
        None => Extraction {
            found: None,
            diagnostics: vec![Diagnostic {
                offset: open,
                message: "unterminated python fence".into(),
            }],
        },
    }
}

struct PySeparators;

impl serde_json::ser::Formatter for PySeparators {
    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, writer: &mut W, first: bool) -> std::io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, writer: &mut W) -> std::io::Result<()> {
        writer.write_all(b": ")
    }
}

/// Serializes a value with `", "` and `": "` separators.
pub fn to_spaced_json(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PySeparators);
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Canonical text of an invocation, as appended to history for the assistant
/// turn: `{"tool": "<name>", "parameters": {...}}`.
pub fn reconstruct_invocation_text(inv: &ToolInvocation) -> String {
    format!(
        "{{\"tool\": {}, \"parameters\": {}}}",
        to_spaced_json(&Value::String(inv.tool.clone())),
        to_spaced_json(&Value::Object(inv.parameters.clone())),
    )
}
