//! `plus_one` / `minus_one`: the trivial tools used in the prompt's worked
//! example. They exist for tests and are refused by [`super::registry_for`],
//! since a model must never see them as available.

use crate::registry::{ToolBinding, ToolError};
use crate::schema::{ParamMap, ParameterSchema, PropertySchema, ToolSpec};

pub const PLUS_ONE: &str = "plus_one";
pub const MINUS_ONE: &str = "minus_one";

pub fn is_example_tool(name: &str) -> bool {
    name == PLUS_ONE || name == MINUS_ONE
}

fn number_schema() -> ParameterSchema {
    ParameterSchema::default()
        .property(
            "number",
            PropertySchema::string("The number that needs to be changed, for example: 1").with_default("1"),
        )
        .require("number")
}

pub fn plus_one_spec() -> ToolSpec {
    ToolSpec::new(PLUS_ONE, "Add one to a number", number_schema())
}

pub fn minus_one_spec() -> ToolSpec {
    ToolSpec::new(MINUS_ONE, "Minus one to a number", number_schema())
}

fn parse_number(raw: &str) -> Result<i128, ToolError> {
    raw.trim()
        .parse::<i128>()
        .map_err(|_| ToolError::InvalidParameters(format!("{raw:?} is not an integer")))
}

pub fn plus_one(number: &str) -> Result<String, ToolError> {
    parse_number(number).map(|n| (n + 1).to_string())
}

pub fn minus_one(number: &str) -> Result<String, ToolError> {
    parse_number(number).map(|n| (n - 1).to_string())
}

fn number_param(params: &ParamMap) -> Result<String, ToolError> {
    super::string_param(params, "number")
}

pub fn plus_one_binding() -> ToolBinding {
    ToolBinding::from_fn(plus_one_spec(), |p| plus_one(&number_param(p)?))
}

pub fn minus_one_binding() -> ToolBinding {
    ToolBinding::from_fn(minus_one_spec(), |p| minus_one(&number_param(p)?))
}
