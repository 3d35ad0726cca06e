//! Chat-completion JSON client.
//!
//! Request: `{model, messages[], tools[], temperature, seed, max_tokens}`.
//! Response: `{choices[0].message{content, tool_calls[]}, usage}`.
//! Field-by-field documentation lives in `docs/wire-protocol.md`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, Role, Sampling, ToolCall, ToolSchema, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}
fn default_in_flight() -> usize {
    8
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
            max_in_flight: default_in_flight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFunction {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTool {
    #[serde(rename = "type")]
    pub kind: String,
    pub function: WireFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tools: Vec<WireTool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl WireRequest {
    pub fn from_chat(request: &ChatRequest) -> Self {
        Self {
            model: request.model.clone(),
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role, content: m.content.clone() })
                .collect(),
            tools: request
                .tools
                .iter()
                .map(|t| WireTool {
                    kind: "function".into(),
                    function: WireFunction {
                        name: t.name.clone(),
                        description: t.description.clone(),
                        parameters: t.parameters.clone(),
                    },
                })
                .collect(),
            temperature: request.sampling.temperature,
            seed: request.sampling.seed,
            max_tokens: request.sampling.max_tokens,
        }
    }

    /// Inverse of [`WireRequest::from_chat`]; tags are not carried on the wire.
    pub fn to_chat(&self) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: self
                .messages
                .iter()
                .map(|m| ChatMessage { role: m.role, content: m.content.clone() })
                .collect(),
            tools: self
                .tools
                .iter()
                .map(|t| ToolSchema {
                    name: t.function.name.clone(),
                    description: t.function.description.clone(),
                    parameters: t.function.parameters.clone(),
                })
                .collect(),
            sampling: Sampling { temperature: self.temperature, seed: self.seed, max_tokens: self.max_tokens },
            tags: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCallFunction {
    pub name: String,
    #[serde(default)]
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireToolCall {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub function: WireToolCallFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponseMessage {
    #[serde(default)]
    pub content: Option<String>,
    #[serde(default)]
    pub tool_calls: Option<Vec<WireToolCall>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireChoice {
    pub message: WireResponseMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub choices: Vec<WireChoice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

impl WireResponse {
    pub fn parse(body: &str) -> Result<ChatResponse, BackendError> {
        let wire: WireResponse =
            serde_json::from_str(body).map_err(|e| BackendError::Malformed { message: e.to_string() })?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed { message: "response has no choices".into() })?;
        let tool_call = choice
            .message
            .tool_calls
            .and_then(|calls| calls.into_iter().next())
            .map(|c| ToolCall { name: c.function.name, arguments: c.function.arguments });
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            tool_call,
            usage: wire.usage,
        })
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().expect("in-flight counter poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.count.lock().expect("in-flight counter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct WireClient {
    name: String,
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

impl WireClient {
    pub fn new(name: impl Into<String>, config: EndpointConfig) -> Result<Self, BackendError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport { message: e.to_string(), attempts: 0 })?;
        let limit = config.max_in_flight.max(1);
        Ok(Self {
            name: name.into(),
            config,
            http,
            in_flight: InFlight { count: Mutex::new(0), freed: Condvar::new(), limit },
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &WireRequest, attempts: u32) -> Result<ChatResponse, Attempt> {
        let mut req = self.http.post(self.url()).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout { attempts })
            } else {
                Attempt::Retry(BackendError::Transport { message: e.to_string(), attempts })
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout { attempts })
            } else {
                Attempt::Retry(BackendError::Transport { message: e.to_string(), attempts })
            }
        })?;
        if !status.is_success() {
            let err = BackendError::Status { status: status.as_u16(), body: text, attempts };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            });
        }
        WireResponse::parse(&text).map_err(Attempt::Fail)
    }
}

impl ChatBackend for WireClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let _slot = self.in_flight.acquire();
        let mut body = WireRequest::from_chat(request);
        if body.model.is_empty() {
            body.model = self.config.model.clone();
        }
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(&body, attempt) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt > self.config.max_retries {
                        return Err(e);
                    }
                    let delay = self
                        .config
                        .backoff_ms
                        .saturating_mul(1u64 << (attempt - 1).min(20))
                        .min(self.config.max_backoff_ms);
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn parses_content_and_usage() {
        let body = r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = WireResponse::parse(body).unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.usage, Some(Usage { prompt_tokens: 3, completion_tokens: 1 }));
    }

    #[test]
    fn absent_usage_is_none() {
        let r = WireResponse::parse(r#"{"choices":[{"message":{"content":null,"tool_calls":[{"id":"c1","type":"function","function":{"name":"search","arguments":"{\"queries\":[\"x\"]}"}}]}}]}"#).unwrap();
        assert_eq!(r.usage, None);
        assert_eq!(r.content, "");
        assert_eq!(r.tool_call.unwrap().name, "search");
    }

    #[test]
    fn malformed_bodies_are_distinct_errors() {
        assert!(matches!(WireResponse::parse("not json"), Err(BackendError::Malformed { .. })));
        assert!(matches!(WireResponse::parse(r#"{"choices":[]}"#), Err(BackendError::Malformed { .. })));
    }

    #[test]
    fn request_shape_matches_protocol() {
        let req = ChatRequest::new("m", vec![ChatMessage::system("s"), ChatMessage::user("u")])
            .with_tools(vec![ToolSchema { name: "visit".into(), description: "d".into(), parameters: json!({"type":"object"}) }])
            .with_sampling(Sampling { temperature: Some(0.6), seed: Some(7), max_tokens: None })
            .with_tag("agent", "a0");
        let v = serde_json::to_value(WireRequest::from_chat(&req)).unwrap();
        assert_eq!(
            v,
            json!({
                "model": "m",
                "messages": [{"role":"system","content":"s"},{"role":"user","content":"u"}],
                "tools": [{"type":"function","function":{"name":"visit","description":"d","parameters":{"type":"object"}}}],
                "temperature": 0.6,
                "seed": 7
            })
        );
    }

    fn role() -> impl Strategy<Value = Role> {
        prop_oneof![Just(Role::System), Just(Role::User), Just(Role::Assistant), Just(Role::Tool)]
    }

    proptest! {
        #[test]
        fn wire_request_round_trips(
            model in "[a-z0-9-]{1,12}",
            msgs in proptest::collection::vec((role(), ".{0,20}"), 0..5),
            temp in proptest::option::of(0.0f64..2.0),
            seed in proptest::option::of(any::<u64>()),
            max_tokens in proptest::option::of(1u32..100_000),
        ) {
            let chat = ChatRequest {
                model,
                messages: msgs.into_iter().map(|(role, content)| ChatMessage { role, content }).collect(),
                tools: vec![],
                sampling: Sampling { temperature: temp, seed, max_tokens },
                tags: Default::default(),
            };
            let wire = WireRequest::from_chat(&chat);
            let text = serde_json::to_string(&wire).unwrap();
            let back: WireRequest = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(&back, &wire);
            prop_assert_eq!(back.to_chat(), chat);
        }
    }
}
