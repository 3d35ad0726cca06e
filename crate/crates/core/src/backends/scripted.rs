//! Deterministic rule-driven backend.
//!
//! A script is an ordered list of `(matcher, response)` rules; the first
//! rule whose matcher accepts the request wins. Response content may refer
//! to request tags as `{tag}` and to the call ordinal as `{call}`.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Role, ToolCall};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    /// 0-based ordinal of the call on this backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<usize>,
    /// Restricts `contains` to messages with this role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    /// Substring that must appear in some (role-filtered) message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Substring that must appear in the last message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_contains: Option<String>,
    /// Every listed tag must be present with exactly this value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

impl Matcher {
    pub fn any() -> Self {
        Self::default()
    }

    pub fn tag(mut self, key: &str, value: impl ToString) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    pub fn call(mut self, call: usize) -> Self {
        self.call = Some(call);
        self
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn accepts(&self, request: &ChatRequest, call: usize) -> bool {
        if self.call.is_some_and(|c| c != call) {
            return false;
        }
        if !self.tags.iter().all(|(k, v)| request.tags.get(k) == Some(v)) {
            return false;
        }
        if let Some(needle) = &self.contains {
            let hit = request
                .messages
                .iter()
                .filter(|m| self.role.is_none_or(|r| r == m.role))
                .any(|m| m.content.contains(needle.as_str()));
            if !hit {
                return false;
            }
        }
        if let Some(needle) = &self.last_contains {
            if !request.messages.last().is_some_and(|m| m.content.contains(needle.as_str())) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ScriptedToolCall>,
    /// When set, the call fails with a scripted error instead of responding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptedResponse {
    pub fn text(content: impl Into<String>) -> Self {
        Self { content: content.into(), ..Self::default() }
    }

    pub fn tool(name: &str, arguments: Value) -> Self {
        Self {
            tool_call: Some(ScriptedToolCall { name: name.to_string(), arguments }),
            ..Self::default()
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self { error: Some(message.into()), ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub when: Matcher,
    pub respond: ScriptedResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<Rule>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, when: Matcher, respond: ScriptedResponse) -> Self {
        self.rules.push(Rule { when, respond });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub call: usize,
    pub request: ChatRequest,
    pub result: Result<ChatResponse, BackendError>,
}

#[derive(Debug, Default)]
struct ScriptState {
    calls: usize,
    trace: Vec<TraceEntry>,
}

pub struct ScriptedBackend {
    name: String,
    script: Script,
    state: Mutex<ScriptState>,
}

fn expand(template: &str, request: &ChatRequest, call: usize) -> String {
    if !template.contains('{') {
        return template.to_string();
    }
    let mut out = template.replace("{call}", &call.to_string());
    for (k, v) in &request.tags {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, script: Script) -> Self {
        Self {
            name: name.into(),
            script,
            state: Mutex::new(ScriptState::default()),
        }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.state.lock().expect("script state poisoned").trace.clone()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("script state poisoned").calls
    }

    fn respond(&self, request: &ChatRequest, call: usize) -> Result<ChatResponse, BackendError> {
        let rule = self
            .script
            .rules
            .iter()
            .find(|r| r.when.accepts(request, call))
            .ok_or_else(|| BackendError::ScriptExhausted {
                backend: self.name.clone(),
                call,
                tags: serde_json::to_string(&request.tags).unwrap_or_default(),
            })?;
        let r = &rule.respond;
        if let Some(message) = &r.error {
            return Err(BackendError::Scripted { message: expand(message, request, call) });
        }
        Ok(ChatResponse {
            content: expand(&r.content, request, call),
            tool_call: r.tool_call.as_ref().map(|tc| ToolCall {
                name: tc.name.clone(),
                arguments: if tc.arguments.is_null() { "{}".to_string() } else { tc.arguments.to_string() },
            }),
            usage: None,
        })
    }
}

impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut state = self.state.lock().expect("script state poisoned");
        let call = state.calls;
        state.calls += 1;
        let result = self.respond(request, call);
        state.trace.push(TraceEntry { call, request: request.clone(), result: result.clone() });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ChatMessage;
    use serde_json::json;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::system("sys"), ChatMessage::user(text)])
    }

    #[test]
    fn catch_all_rule_answers_every_call() {
        let b = ScriptedBackend::new(
            "s",
            Script::new().rule(Matcher::any(), ScriptedResponse::text("Exact Answer: 42\nConfidence: 90%")),
        );
        for _ in 0..3 {
            assert_eq!(b.chat(&req("q")).unwrap().content, "Exact Answer: 42\nConfidence: 90%");
        }
        assert_eq!(b.calls(), 3);
    }

    #[test]
    fn ordinal_script_produces_search_visit_answer() {
        let b = ScriptedBackend::new(
            "s",
            Script::new()
                .rule(Matcher::any().call(0), ScriptedResponse::tool("search", json!({"queries": ["x"]})))
                .rule(Matcher::any().call(1), ScriptedResponse::tool("visit", json!({"url": "u"})))
                .rule(Matcher::any().call(2), ScriptedResponse::text("Exact Answer: y")),
        );
        let names: Vec<String> = (0..3)
            .map(|_| {
                let r = b.chat(&req("q")).unwrap();
                r.tool_call.map(|t| t.name).unwrap_or(r.content)
            })
            .collect();
        assert_eq!(names, ["search", "visit", "Exact Answer: y"]);
        let trace = b.trace();
        assert_eq!(trace.iter().map(|t| t.call).collect::<Vec<_>>(), [0, 1, 2]);
        // a fourth call has no rule
        assert!(matches!(b.chat(&req("q")), Err(BackendError::ScriptExhausted { call: 3, .. })));
    }

    #[test]
    fn templates_expand_tags_and_call() {
        let b = ScriptedBackend::new("hub", Script::new().rule(Matcher::any(), ScriptedResponse::text("NOTE({ordinal}) #{call}")));
        let r = b.chat(&req("x").with_tag("ordinal", 2)).unwrap();
        assert_eq!(r.content, "NOTE(2) #0");
    }

    #[test]
    fn matchers_filter_on_role_content_and_tags() {
        let b = ScriptedBackend::new(
            "s",
            Script::new()
                .rule(Matcher { role: Some(Role::System), contains: Some("q".into()), ..Matcher::default() }, ScriptedResponse::text("sys-q"))
                .rule(Matcher::any().tag("agent", "a1"), ScriptedResponse::text("a1"))
                .rule(Matcher::any().contains("q"), ScriptedResponse::text("user-q")),
        );
        assert_eq!(b.chat(&req("q")).unwrap().content, "user-q");
        assert_eq!(b.chat(&req("q").with_tag("agent", "a1")).unwrap().content, "a1");
    }

    #[test]
    fn identical_request_sequences_give_identical_traces() {
        let script = Script::new()
            .rule(Matcher::any().call(1), ScriptedResponse::failure("boom"))
            .rule(Matcher::any(), ScriptedResponse::text("ok {call}"));
        let run = || {
            let b = ScriptedBackend::new("s", script.clone());
            for t in ["a", "b", "c"] {
                let _ = b.chat(&req(t));
            }
            serde_json::to_string(&b.trace()).unwrap()
        };
        assert_eq!(run(), run());
    }
}
