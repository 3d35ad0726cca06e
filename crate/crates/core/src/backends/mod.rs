//! Model-client abstraction.
//!
//! Everything that talks to a language model goes through [`ChatBackend`].
//! Two implementations ship: [`WireClient`] speaks the common chat-completion
//! JSON protocol over HTTP, and [`ScriptedBackend`] replays a rule script so
//! every test and acceptance check runs without a model.

mod scripted;
mod wire;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use scripted::{Matcher, Rule, Script, ScriptedBackend, ScriptedResponse, ScriptedToolCall, TraceEntry};
pub use wire::{EndpointConfig, WireClient, WireRequest, WireResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// A function-style tool description exposed to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Sampling {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub tools: Vec<ToolSchema>,
    #[serde(default)]
    pub sampling: Sampling,
    /// Caller-side labels (agent, turn, hub role, ...). Never sent on the
    /// wire; scripted backends match on them and expand them in templates.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            tools: Vec::new(),
            sampling: Sampling::default(),
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: &str, value: impl ToString) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tools = tools;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    /// Arguments exactly as the model produced them (usually a JSON object).
    pub arguments: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: content.into(), ..Self::default() }
    }

    /// Native tool call if present, otherwise a fenced ```tool_call block in the content.
    pub fn effective_tool_call(&self) -> Option<Result<ToolCall, String>> {
        if let Some(tc) = &self.tool_call {
            return Some(Ok(tc.clone()));
        }
        parse_fenced_tool_call(&self.content)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP status {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, body: String, attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed response body: {message}")]
    Malformed { message: String },
    #[error("scripted backend `{backend}` has no rule for call {call} (tags {tags})")]
    ScriptExhausted { backend: String, call: usize, tags: String },
    #[error("scripted failure: {message}")]
    Scripted { message: String },
    #[error("backend `{0}` is not configured")]
    Unknown(String),
}

impl BackendError {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Timeout { .. } => "timeout",
            BackendError::Status { .. } => "status",
            BackendError::Transport { .. } => "transport",
            BackendError::Malformed { .. } => "malformed",
            BackendError::ScriptExhausted { .. } => "script_exhausted",
            BackendError::Scripted { .. } => "scripted",
            BackendError::Unknown(_) => "unknown_backend",
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

const FENCE_OPEN: &str = "```tool_call";

/// Parses the fenced-text tool call fallback:
///
/// ````text
/// ```tool_call
/// {"name": "search", "arguments": {"queries": ["..."]}}
/// ```
/// ````
pub fn parse_fenced_tool_call(content: &str) -> Option<Result<ToolCall, String>> {
    let start = content.find(FENCE_OPEN)? + FENCE_OPEN.len();
    let rest = &content[start..];
    let Some(end) = rest.find("```") else {
        return Some(Err("unterminated tool_call block".into()));
    };
    let body = rest[..end].trim();
    let parsed: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return Some(Err(format!("tool_call block is not valid JSON: {e}"))),
    };
    let Some(name) = parsed.get("name").and_then(Value::as_str) else {
        return Some(Err("tool_call block has no string `name`".into()));
    };
    let arguments = match parsed.get("arguments") {
        None => "{}".to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
    };
    Some(Ok(ToolCall { name: name.to_string(), arguments }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_fallback_parses() {
        let content = "Let me search.\n```tool_call\n{\"name\": \"search\", \"arguments\": {\"queries\": [\"a\"]}}\n```\n";
        let tc = parse_fenced_tool_call(content).unwrap().unwrap();
        assert_eq!(tc.name, "search");
        assert_eq!(tc.arguments, r#"{"queries":["a"]}"#);
    }

    #[test]
    fn fenced_fallback_reports_bad_json() {
        let content = "```tool_call\n{not json}\n```";
        assert!(parse_fenced_tool_call(content).unwrap().is_err());
        assert!(parse_fenced_tool_call("plain text").is_none());
    }

    #[test]
    fn native_tool_call_wins_over_fence() {
        let resp = ChatResponse {
            content: "```tool_call\n{\"name\":\"visit\"}\n```".into(),
            tool_call: Some(ToolCall { name: "search".into(), arguments: "{}".into() }),
            usage: None,
        };
        assert_eq!(resp.effective_tool_call().unwrap().unwrap().name, "search");
    }
}
