//! System-prompt generation: turns a [`ToolList`] into the instruction block
//! that teaches a model the `tool_json` calling convention in-context.

use serde_json::Value;

use crate::schema::{ToolList, ToolSpec};

/// Worked example shown to the model. The example tools are deliberately
/// trivial and the text states they are not actually available.
pub const TOOL_EXAMPLE: &str = "You will receive a JSON string containing a list of callable tools. Please parse this JSON string and return a JSON object containing the tool name and tool parameters. Here is an example of the tool list:\n\n{\"tools\": [{\"name\": \"plus_one\", \"description\": \"Add one to a number\", \"parameters\": {\"type\": \"object\",\"properties\": {\"number\": {\"type\": \"string\",\"description\": \"The number that needs to be changed, for example: 1\",\"default\": \"1\",}},\"required\": [\"number\"]}},{\"name\": \"minus_one\", \"description\": \"Minus one to a number\", \"parameters\": {\"type\": \"object\",\"properties\": {\"number\": {\"type\": \"string\",\"description\": \"The number that needs to be changed, for example: 1\",\"default\": \"1\",}},\"required\": [\"number\"]}}]}\n\nBased on this tool list, generate a JSON object to call a tool. For example, if you need to add one to number 77, return:\n\n{\"tool\": \"plus_one\", \"parameters\": {\"number\": \"77\"}}\n\nPlease note that the above is just an example and does not mean that the plus_one and minus_one tools are currently available.";

/// The call-object format line the model is asked to follow.
pub const RETURN_FORMAT: &str = "{\"tool\": \"tool name\", \"parameters\": {\"parameter name\": \"parameter value\"}}";

const API_HEADER: &str = "Answer the following questions as best you can. You have access to the following APIs:\n";

const FORMAT_HEADER: &str = "        \nUse the following format:\n```tool_json\n";

const BEHAVIOR_RULES: &str = "\n``` \n\nPlease choose the appropriate tool according to the user's question. If you don't need to call it, please reply directly to the user's question. When the user communicates with you in a language other than English, you need to communicate with the user in the same language.\n\nWhen you have enough information from the tool results, respond directly to the user with a text message without having to call the tool again.\n";

/// The assembled instruction and its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionBlock {
    pub tool_example: &'static str,
    pub tools_instructions: String,
    pub return_format: &'static str,
    pub full: String,
}

impl InstructionBlock {
    /// `None` for an empty list: with no tools the prompt passes through.
    pub fn build(tools: &ToolList) -> Option<Self> {
        if tools.is_empty() {
            return None;
        }
        let tools_instructions = build_tool_instructions(tools);
        let mut full =
            String::with_capacity(TOOL_EXAMPLE.len() + tools_instructions.len() + BEHAVIOR_RULES.len() + 256);
        full.push('\n');
        full.push_str(TOOL_EXAMPLE);
        full.push('\n');
        full.push_str(API_HEADER);
        full.push_str(&tools_instructions);
        full.push('\n');
        full.push_str(FORMAT_HEADER);
        full.push_str(RETURN_FORMAT);
        full.push_str(BEHAVIOR_RULES);
        Some(Self {
            tool_example: TOOL_EXAMPLE,
            tools_instructions,
            return_format: RETURN_FORMAT,
            full,
        })
    }
}

/// One line per tool, in list order.
pub fn build_tool_instructions(tools: &ToolList) -> String {
    tools.iter().map(tool_instruction_line).collect()
}

fn tool_instruction_line(tool: &ToolSpec) -> String {
    let parameters = serde_json::to_value(&tool.parameters).expect("parameter schema serializes");
    let required = Value::Array(tool.required().iter().cloned().map(Value::String).collect());
    let name = &tool.name;
    format!(
        "{name}:Call this tool to interact with the {name} API. What is the {name} API useful for? {}. Parameters:{}Required parameters:{}\n",
        tool.description,
        python_literal(&parameters),
        python_literal(&required),
    )
}

/// Builds the system prompt for a conversation.
///
/// Without tools (or with an empty list) the base prompt is returned as is,
/// or an empty string when there is none. With tools, the instruction block
/// follows the base prompt after one blank line.
pub fn build_system_prompt(tools: Option<&ToolList>, base_system: Option<&str>) -> String {
    let block = tools.and_then(InstructionBlock::build);
    match (block, base_system) {
        (None, base) => base.unwrap_or_default().to_string(),
        (Some(block), None) => block.full,
        (Some(block), Some(base)) => format!("{}\n{}", base.trim_end_matches('\n'), block.full),
    }
}

/// Renders a JSON value the way Python's `str()` renders the equivalent
/// dict/list/scalar: single-quoted strings, `True`/`False`/`None`, `': '` and
/// `', '` separators, keys in insertion order.
pub fn python_literal(value: &Value) -> String {
    let mut out = String::new();
    write_python(value, &mut out);
    out
}

fn write_python(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("None"),
        Value::Bool(true) => out.push_str("True"),
        Value::Bool(false) => out.push_str("False"),
        Value::Number(n) => out.push_str(&n.to_string()),
        Value::String(s) => write_python_str(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_python(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_python_str(key, out);
                out.push_str(": ");
                write_python(item, out);
            }
            out.push('}');
        }
    }
}

// Same quote choice as CPython's str.__repr__.
fn write_python_str(s: &str, out: &mut String) {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                out.push_str(&format!("\\x{:02x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push(quote);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_tool_list;
    use serde_json::json;

    const EXAMPLE_TOOLS: &str = r#"[{"name": "plus_one", "description": "Add one to a number", "parameters": {"type": "object","properties": {"number": {"type": "string","description": "The number that needs to be changed, for example: 1","default": "1"}},"required": ["number"]}},{"name": "minus_one", "description": "Minus one to a number", "parameters": {"type": "object","properties": {"number": {"type": "string","description": "The number that needs to be changed, for example: 1","default": "1"}},"required": ["number"]}}]"#;

    // Hand-applied concatenation template, frozen.
    const PLUS_ONE_LINE: &str = "plus_one:Call this tool to interact with the plus_one API. What is the plus_one API useful for? Add one to a number. Parameters:{'type': 'object', 'properties': {'number': {'type': 'string', 'description': 'The number that needs to be changed, for example: 1', 'default': '1'}}, 'required': ['number']}Required parameters:['number']\n";
    const MINUS_ONE_LINE: &str = "minus_one:Call this tool to interact with the minus_one API. What is the minus_one API useful for? Minus one to a number. Parameters:{'type': 'object', 'properties': {'number': {'type': 'string', 'description': 'The number that needs to be changed, for example: 1', 'default': '1'}}, 'required': ['number']}Required parameters:['number']\n";

    fn example() -> ToolList {
        parse_tool_list(EXAMPLE_TOOLS).unwrap()
    }

    #[test]
    fn empty_list_yields_no_instructions() {
        assert_eq!(build_tool_instructions(&ToolList::empty()), "");
        assert!(InstructionBlock::build(&ToolList::empty()).is_none());
    }

    #[test]
    fn single_tool_line_matches_golden() {
        let list = ToolList::new(vec![example().specs()[0].clone()]).unwrap();
        assert_eq!(build_tool_instructions(&list), PLUS_ONE_LINE);
    }

    #[test]
    fn two_tools_in_list_order() {
        assert_eq!(
            build_tool_instructions(&example()),
            format!("{PLUS_ONE_LINE}{MINUS_ONE_LINE}")
        );
    }

    #[test]
    fn python_literal_rendering() {
        assert_eq!(
            python_literal(&json!({"a": [1, 2.5, true, false, null], "b": "it's"})),
            r#"{'a': [1, 2.5, True, False, None], 'b': "it's"}"#
        );
        assert_eq!(python_literal(&json!("both ' and \"")), r#"'both \' and "'"#);
        assert_eq!(python_literal(&json!("tab\there\n\\")), r"'tab\there\n\\'");
        assert_eq!(python_literal(&json!("\u{1}")), r"'\x01'");
        assert_eq!(python_literal(&json!("12°C")), "'12°C'");
    }

    #[test]
    fn full_instruction_layout() {
        let block = InstructionBlock::build(&example()).unwrap();
        let expected = format!(
            "\n{TOOL_EXAMPLE}\nAnswer the following questions as best you can. You have access to the following APIs:\n{PLUS_ONE_LINE}{MINUS_ONE_LINE}\n        \nUse the following format:\n```tool_json\n{RETURN_FORMAT}\n``` \n\nPlease choose the appropriate tool according to the user's question. If you don't need to call it, please reply directly to the user's question. When the user communicates with you in a language other than English, you need to communicate with the user in the same language.\n\nWhen you have enough information from the tool results, respond directly to the user with a text message without having to call the tool again.\n"
        );
        assert_eq!(block.full, expected);
    }

    #[test]
    fn parts_appear_in_order() {
        let block = InstructionBlock::build(&example()).unwrap();
        let a = block.full.find(block.tool_example).unwrap();
        let b = block.full.find(&block.tools_instructions).unwrap();
        let c = block.full.find(block.return_format).unwrap();
        assert!(a < b && b < c);
    }

    #[test]
    fn tool_example_keeps_availability_caution() {
        assert!(TOOL_EXAMPLE.starts_with("You will receive a JSON string containing a list of callable tools."));
        assert!(TOOL_EXAMPLE.ends_with("does not mean that the plus_one and minus_one tools are currently available."));
        assert!(TOOL_EXAMPLE.contains("{\"tool\": \"plus_one\", \"parameters\": {\"number\": \"77\"}}"));
    }

    #[test]
    fn return_format_is_fenced() {
        let prompt = build_system_prompt(Some(&example()), None);
        assert!(prompt.contains(
            "```tool_json\n{\"tool\": \"tool name\", \"parameters\": {\"parameter name\": \"parameter value\"}}\n```"
        ));
    }

    #[test]
    fn passthrough_without_tools() {
        assert_eq!(build_system_prompt(None, Some("You are helpful.")), "You are helpful.");
        assert_eq!(
            build_system_prompt(Some(&ToolList::empty()), Some("You are helpful.")),
            "You are helpful."
        );
        assert_eq!(build_system_prompt(None, None), "");
    }

    #[test]
    fn base_prompt_then_blank_line_then_instruction() {
        let prompt = build_system_prompt(Some(&example()), Some("You are helpful."));
        assert!(prompt.starts_with("You are helpful.\n\nYou will receive a JSON string"));
    }

    #[test]
    fn every_name_appears_twice() {
        let prompt = build_system_prompt(Some(&example()), None);
        for name in ["plus_one", "minus_one"] {
            assert!(prompt.contains(&format!("\n{name}:Call this tool")));
            assert!(prompt.contains(&format!("interact with the {name} API")));
        }
    }
}
