//! Tool actions and their XML wire form.
//!
//! Grammar:
//!
//! ```text
//! <function=NAME><parameter=KEY>VALUE</parameter>...</function>
//! ```
//!
//! Values are emitted raw, without escaping, so code payloads with quotes,
//! braces and newlines survive untouched. The only reserved sequence is the
//! closing `</parameter>` tag, which a value may not contain.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FUNCTION_OPEN: &str = "<function=";
pub const FUNCTION_CLOSE: &str = "</function>";
pub const PARAMETER_OPEN: &str = "<parameter=";
pub const PARAMETER_CLOSE: &str = "</parameter>";

/// Tools exposed by the scaffold.
pub mod tools {
    pub const FILE_EDITOR: &str = "file_editor";
    pub const SEARCH: &str = "search";
    pub const EXECUTE_BASH: &str = "execute_bash";
    pub const SUBMIT: &str = "submit";

    pub const ALL: [&str; 4] = [FILE_EDITOR, SEARCH, EXECUTE_BASH, SUBMIT];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub tool_name: String,
    #[serde(default)]
    pub parameters: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("tool name must be non-empty and free of `<`, `>` and whitespace: {0:?}")]
    InvalidToolName(String),
    #[error("parameter name must be non-empty and free of `<`, `>` and whitespace: {0:?}")]
    InvalidParameterName(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("value of parameter `{0}` contains the reserved sequence `</parameter>`")]
    ReservedSequence(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action parse error at char {offset}: {reason}")]
pub struct ActionParseError {
    pub offset: usize,
    pub reason: ParseReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseReason {
    #[error("no function element")]
    NoFunction,
    #[error("more than one function element")]
    MultipleFunctions,
    #[error("unterminated function tag")]
    UnterminatedFunctionTag,
    #[error("unterminated parameter tag")]
    UnterminatedParameterTag,
    #[error("unterminated parameter value")]
    UnterminatedParameter,
    #[error("missing </function>")]
    UnterminatedFunction,
    #[error("unexpected content inside function element")]
    UnexpectedContent,
    #[error(transparent)]
    Invalid(#[from] ActionError),
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c == '<' || c == '>' || c.is_whitespace())
}

impl Action {
    /// Builds an action, enforcing the name and uniqueness invariants.
    pub fn new<K, V>(
        tool_name: impl Into<String>,
        parameters: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self, ActionError>
    where
        K: Into<String>,
        V: Into<String>,
    {
        let tool_name = tool_name.into();
        let mut map = IndexMap::new();
        for (k, v) in parameters {
            let k = k.into();
            if map.contains_key(&k) {
                return Err(ActionError::DuplicateParameter(k));
            }
            map.insert(k, v.into());
        }
        let action = Self {
            tool_name,
            parameters: map,
        };
        action.validate()?;
        Ok(action)
    }

    pub fn submit() -> Self {
        Self {
            tool_name: tools::SUBMIT.to_string(),
            parameters: IndexMap::new(),
        }
    }

    pub fn is_submit(&self) -> bool {
        self.tool_name == tools::SUBMIT
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.parameters.get(name).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        if !valid_name(&self.tool_name) {
            return Err(ActionError::InvalidToolName(self.tool_name.clone()));
        }
        for key in self.parameters.keys() {
            if !valid_name(key) {
                return Err(ActionError::InvalidParameterName(key.clone()));
            }
        }
        Ok(())
    }
}

pub fn encode_action(action: &Action) -> Result<String, ActionError> {
    action.validate()?;
    let mut out = String::new();
    out.push_str(FUNCTION_OPEN);
    out.push_str(&action.tool_name);
    out.push('>');
    for (key, value) in &action.parameters {
        if value.contains(PARAMETER_CLOSE) {
            return Err(ActionError::ReservedSequence(key.clone()));
        }
        out.push_str(PARAMETER_OPEN);
        out.push_str(key);
        out.push('>');
        out.push_str(value);
        out.push_str(PARAMETER_CLOSE);
    }
    out.push_str(FUNCTION_CLOSE);
    Ok(out)
}

/// Decodes the single function element in `text`. Prose before and after
/// the element is ignored; a second element is an error.
pub fn decode_action(text: &str) -> Result<Action, ActionParseError> {
    let err = |byte: usize, reason: ParseReason| ActionParseError {
        offset: text[..byte].chars().count(),
        reason,
    };

    let start = text
        .find(FUNCTION_OPEN)
        .ok_or_else(|| err(0, ParseReason::NoFunction))?;
    let name_start = start + FUNCTION_OPEN.len();
    let name_end = name_start
        + text[name_start..]
            .find('>')
            .ok_or_else(|| err(start, ParseReason::UnterminatedFunctionTag))?;
    let tool_name = &text[name_start..name_end];
    if !valid_name(tool_name) {
        return Err(err(
            name_start,
            ActionError::InvalidToolName(tool_name.to_string()).into(),
        ));
    }

    let mut parameters = IndexMap::new();
    let mut pos = name_end + 1;
    loop {
        let rest = &text[pos..];
        let trimmed = rest.trim_start();
        pos += rest.len() - trimmed.len();
        if trimmed.starts_with(FUNCTION_CLOSE) {
            pos += FUNCTION_CLOSE.len();
            break;
        }
        if trimmed.starts_with(PARAMETER_OPEN) {
            let key_start = pos + PARAMETER_OPEN.len();
            let key_end = key_start
                + text[key_start..]
                    .find('>')
                    .ok_or_else(|| err(pos, ParseReason::UnterminatedParameterTag))?;
            let key = &text[key_start..key_end];
            if !valid_name(key) {
                return Err(err(
                    key_start,
                    ActionError::InvalidParameterName(key.to_string()).into(),
                ));
            }
            let value_start = key_end + 1;
            let value_end = value_start
                + text[value_start..]
                    .find(PARAMETER_CLOSE)
                    .ok_or_else(|| err(pos, ParseReason::UnterminatedParameter))?;
            if parameters.contains_key(key) {
                return Err(err(pos, ActionError::DuplicateParameter(key.to_string()).into()));
            }
            parameters.insert(key.to_string(), text[value_start..value_end].to_string());
            pos = value_end + PARAMETER_CLOSE.len();
            continue;
        }
        if trimmed.is_empty() {
            return Err(err(pos, ParseReason::UnterminatedFunction));
        }
        return Err(err(pos, ParseReason::UnexpectedContent));
    }

    if let Some(second) = text[pos..].find(FUNCTION_OPEN) {
        return Err(err(pos + second, ParseReason::MultipleFunctions));
    }

    Ok(Action {
        tool_name: tool_name.to_string(),
        parameters,
    })
}
