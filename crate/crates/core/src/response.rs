//! Parsing of composite model responses.
//!
//! A response is reasoning, then digest, then action, in that order:
//!
//! ```text
//! <think>
//! ...detailed reasoning...
//! </think>
//! <digest>
//! ...short digest...
//! </digest>
//! <function=execute_bash><parameter=cmd>pytest -q</parameter></function>
//! ```
//!
//! Tag names are configurable through [`ResponseTags`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{decode_action, Action, ActionParseError, FUNCTION_OPEN};
use crate::token::TokenCounter;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseTags {
    pub reasoning: String,
    pub digest: String,
}

impl Default for ResponseTags {
    fn default() -> Self {
        Self {
            reasoning: "think".into(),
            digest: "digest".into(),
        }
    }
}

impl ResponseTags {
    pub fn wrap_reasoning(&self, text: &str) -> String {
        format!("<{0}>\n{1}\n</{0}>", self.reasoning, text)
    }

    pub fn wrap_digest(&self, text: &str) -> String {
        format!("<{0}>\n{1}\n</{0}>", self.digest, text)
    }

    /// Formats a full composite response.
    pub fn compose(&self, reasoning: &str, digest: &str, action_xml: &str) -> String {
        format!(
            "{}\n{}\n{}",
            self.wrap_reasoning(reasoning),
            self.wrap_digest(digest),
            action_xml
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatCode {
    MissingReasoning,
    MissingDigest,
    MissingAction,
    OutOfOrder,
    EmptyReasoning,
    EmptyDigest,
    Unterminated,
    UnexpectedThinking,
}

impl FormatCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::MissingReasoning => "missing-reasoning",
            Self::MissingDigest => "missing-digest",
            Self::MissingAction => "missing-action",
            Self::OutOfOrder => "out-of-order",
            Self::EmptyReasoning => "empty-reasoning",
            Self::EmptyDigest => "empty-digest",
            Self::Unterminated => "unterminated",
            Self::UnexpectedThinking => "unexpected-thinking",
        }
    }
}

impl std::fmt::Display for FormatCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("format error: {code}")]
pub struct FormatError {
    pub code: FormatCode,
}

impl From<FormatCode> for FormatError {
    fn from(code: FormatCode) -> Self {
        Self { code }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    open: usize,
    content: (usize, usize),
    end: usize,
}

fn find_block(text: &str, tag: &str) -> Result<Option<Block>, FormatCode> {
    let open_tag = format!("<{tag}>");
    let close_tag = format!("</{tag}>");
    let Some(open) = text.find(&open_tag) else {
        return Ok(None);
    };
    let content_start = open + open_tag.len();
    let close = text[content_start..]
        .find(&close_tag)
        .ok_or(FormatCode::Unterminated)?
        + content_start;
    Ok(Some(Block {
        open,
        content: (content_start, close),
        end: close + close_tag.len(),
    }))
}

fn slice(text: &str, b: Block) -> String {
    text[b.content.0..b.content.1].trim().to_string()
}

/// Locates reasoning and digest blocks, enforcing reasoning-before-digest.
fn thinking_blocks(text: &str, tags: &ResponseTags) -> Result<(Block, Block), FormatError> {
    let r = find_block(text, &tags.reasoning)?;
    let d = find_block(text, &tags.digest)?;
    match (r, d) {
        (Some(r), Some(d)) => {
            if d.open < r.end {
                return Err(FormatCode::OutOfOrder.into());
            }
            Ok((r, d))
        }
        (None, Some(_)) => Err(FormatCode::MissingReasoning.into()),
        (_, None) => Err(FormatCode::MissingDigest.into()),
    }
}

/// Extracts `(reasoning, digest)` from a synthesizer reply. Anything after the
/// digest block, such as an echoed action, is ignored.
pub fn parse_synthesizer_response(
    text: &str,
    tags: &ResponseTags,
) -> Result<(String, String), FormatError> {
    let (r, d) = thinking_blocks(text, tags)?;
    let reasoning = slice(text, r);
    let digest = slice(text, d);
    if reasoning.is_empty() {
        return Err(FormatCode::EmptyReasoning.into());
    }
    if digest.is_empty() {
        return Err(FormatCode::EmptyDigest.into());
    }
    Ok((reasoning, digest))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentResponse {
    pub reasoning: Option<String>,
    pub digest: Option<String>,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct ResponseRules {
    pub tags: ResponseTags,
    pub max_response_tokens: usize,
    pub counter: TokenCounter,
    /// `false` under the disable-thinking strategy: reasoning and digest
    /// blocks must then be absent.
    pub thinking: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResponseError {
    #[error("response has {tokens} tokens, limit is {limit}")]
    TooLong { tokens: usize, limit: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Action(#[from] ActionParseError),
}

impl From<FormatCode> for ResponseError {
    fn from(code: FormatCode) -> Self {
        Self::Format(code.into())
    }
}

/// Splits an agent response into reasoning, digest and action.
pub fn parse_agent_response(text: &str, rules: &ResponseRules) -> Result<AgentResponse, ResponseError> {
    let tokens = rules.counter.count(text);
    if tokens > rules.max_response_tokens {
        return Err(ResponseError::TooLong {
            tokens,
            limit: rules.max_response_tokens,
        });
    }

    if !rules.thinking {
        if find_block(text, &rules.tags.reasoning)?.is_some() || find_block(text, &rules.tags.digest)?.is_some() {
            return Err(FormatCode::UnexpectedThinking.into());
        }
        if !text.contains(FUNCTION_OPEN) {
            return Err(FormatCode::MissingAction.into());
        }
        return Ok(AgentResponse {
            reasoning: None,
            digest: None,
            action: decode_action(text)?,
        });
    }

    let (r, d) = thinking_blocks(text, &rules.tags)?;
    let tail = &text[d.end..];
    if !tail.contains(FUNCTION_OPEN) {
        // an action before or between the blocks breaks the strict order
        let code = if text[..r.open].contains(FUNCTION_OPEN) || text[r.end..d.open].contains(FUNCTION_OPEN) {
            FormatCode::OutOfOrder
        } else {
            FormatCode::MissingAction
        };
        return Err(code.into());
    }
    let reasoning = slice(text, r);
    if reasoning.is_empty() {
        return Err(FormatCode::EmptyReasoning.into());
    }
    Ok(AgentResponse {
        reasoning: Some(reasoning),
        digest: Some(slice(text, d)),
        action: decode_action(tail)?,
    })
}
