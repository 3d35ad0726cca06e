//! Task tools: search, visit, python, scholar.
//!
//! Search and visit go through a [`WebProvider`]; the offline [`Corpus`] is
//! the default provider and the one every test uses. Python and scholar are
//! served from a [`StubTable`] of canned outputs.

mod corpus;
mod stubs;

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::backends::ToolSchema;
use crate::prompts::memory_tool_text;
use crate::types::ToolProfile;

pub use corpus::{snippet, terms, Corpus, Document, SearchHit, SNIPPET_CHARS};
pub use stubs::{input_hash, StubEntry, StubTable};

pub const DEFAULT_TOP_K: usize = 10;
pub const MAX_MEMORY_PAGES: usize = 5;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ToolError {
    #[error("invalid arguments: {0}")]
    Arguments(String),
    #[error("page not found: {0}")]
    NotFound(String),
    #[error("tool `{0}` is not available for this task")]
    Unavailable(String),
    #[error("unknown tool `{0}`")]
    Unknown(String),
    #[error("no stubbed output for this {0} input")]
    StubMiss(String),
    #[error("provider failure: {0}")]
    Provider(String),
}

impl ToolError {
    /// Whether the tool actually ran (as opposed to being rejected up front).
    pub fn invoked(&self) -> bool {
        matches!(self, ToolError::NotFound(_) | ToolError::StubMiss(_) | ToolError::Provider(_))
    }

    pub fn observation(&self) -> String {
        format!("Error: {self}")
    }
}

/// Backing implementation of search and visit.
pub trait WebProvider: Send + Sync {
    fn search(&self, queries: &[String], top_k: usize) -> Result<Vec<Vec<SearchHit>>, ToolError>;
    fn visit(&self, url: &str) -> Result<String, ToolError>;
}

impl WebProvider for Corpus {
    fn search(&self, queries: &[String], top_k: usize) -> Result<Vec<Vec<SearchHit>>, ToolError> {
        Corpus::search(self, queries, top_k)
    }

    fn visit(&self, url: &str) -> Result<String, ToolError> {
        Corpus::visit(self, url)
    }
}

/// Live provider: POSTs `{queries, top_k}` to a search endpoint that answers
/// with one `[{url, title, snippet}]` list per query, and fetches pages directly.
pub struct HttpWebProvider {
    search_url: String,
    http: reqwest::blocking::Client,
}

impl HttpWebProvider {
    pub fn new(search_url: impl Into<String>, timeout: Duration) -> Result<Self, ToolError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ToolError::Provider(e.to_string()))?;
        Ok(Self { search_url: search_url.into(), http })
    }
}

fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len());
    let mut in_tag = false;
    for c in html.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => {
                in_tag = false;
                out.push(' ');
            }
            _ if !in_tag => out.push(c),
            _ => {}
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl WebProvider for HttpWebProvider {
    fn search(&self, queries: &[String], top_k: usize) -> Result<Vec<Vec<SearchHit>>, ToolError> {
        if queries.is_empty() || queries.iter().all(|q| q.trim().is_empty()) {
            return Err(ToolError::Arguments("search needs at least one nonempty query".into()));
        }
        self.http
            .post(&self.search_url)
            .json(&json!({"queries": queries, "top_k": top_k}))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| ToolError::Provider(e.to_string()))?
            .json()
            .map_err(|e| ToolError::Provider(e.to_string()))
    }

    fn visit(&self, url: &str) -> Result<String, ToolError> {
        let resp = self.http.get(url).send().map_err(|e| ToolError::Provider(e.to_string()))?;
        if resp.status().as_u16() == 404 {
            return Err(ToolError::NotFound(url.to_string()));
        }
        let body = resp
            .error_for_status()
            .and_then(|r| r.text())
            .map_err(|e| ToolError::Provider(e.to_string()))?;
        Ok(strip_markup(&body))
    }
}

pub fn format_search_results(queries: &[String], results: &[Vec<SearchHit>]) -> String {
    let mut out = String::new();
    for (q, hits) in queries.iter().zip(results) {
        out.push_str(&format!("Results for \"{q}\":\n"));
        if hits.is_empty() {
            out.push_str("(no results)\n");
        }
        for (i, h) in hits.iter().enumerate() {
            out.push_str(&format!("{}. {}\n   {}\n   {}\n", i + 1, h.title, h.url, h.snippet));
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn string_list(args: &Value, keys: &[&str]) -> Option<Vec<String>> {
    keys.iter().find_map(|k| match args.get(*k)? {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items.iter().map(|v| v.as_str().map(str::to_string)).collect(),
        _ => None,
    })
}

fn string_arg(args: &Value, key: &str) -> Result<String, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ToolError::Arguments(format!("missing string argument `{key}`")))
}

/// The task tools available to one agent.
#[derive(Clone)]
pub struct Toolbox {
    pub profile: ToolProfile,
    pub web: Arc<dyn WebProvider>,
    pub stubs: Arc<StubTable>,
    pub top_k: usize,
}

impl Toolbox {
    pub fn new(profile: ToolProfile, web: Arc<dyn WebProvider>, stubs: Arc<StubTable>) -> Self {
        Self { profile, web, stubs, top_k: DEFAULT_TOP_K }
    }

    pub fn offline(profile: ToolProfile, corpus: Corpus) -> Self {
        Self::new(profile, Arc::new(corpus), Arc::new(StubTable::default()))
    }

    pub fn tool_names(&self) -> Vec<&'static str> {
        match self.profile {
            ToolProfile::Web => vec!["search", "visit"],
            ToolProfile::WebPythonScholar => vec!["search", "visit", "python", "scholar"],
        }
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tool_names().into_iter().filter_map(task_tool_schema).collect()
    }

    pub fn invoke(&self, name: &str, args: &Value) -> Result<String, ToolError> {
        if task_tool_schema(name).is_none() {
            return Err(ToolError::Unknown(name.to_string()));
        }
        if !self.profile.allows(name) {
            return Err(ToolError::Unavailable(name.to_string()));
        }
        match name {
            "search" => {
                let queries = string_list(args, &["queries", "query"])
                    .ok_or_else(|| ToolError::Arguments("`queries` must be a list of strings".into()))?;
                let results = self.web.search(&queries, self.top_k)?;
                Ok(format_search_results(&queries, &results))
            }
            "visit" => self.web.visit(&string_arg(args, "url")?),
            "python" => {
                let code = string_arg(args, "code")?;
                self.stubs.lookup("python", &code).map(str::to_string).ok_or(ToolError::StubMiss("python".into()))
            }
            "scholar" => {
                let query = string_arg(args, "query")?;
                self.stubs.lookup("scholar", &query).map(str::to_string).ok_or(ToolError::StubMiss("scholar".into()))
            }
            other => Err(ToolError::Unknown(other.to_string())),
        }
    }
}

pub fn task_tool_schema(name: &str) -> Option<ToolSchema> {
    let (description, parameters) = match name {
        "search" => (
            "Search the web. Accepts a batch of queries and returns ranked results (title, url, snippet) for each.",
            json!({"type": "object", "properties": {"queries": {"type": "array", "items": {"type": "string"}, "description": "one or more search queries"}}, "required": ["queries"]}),
        ),
        "visit" => (
            "Visit a web page and return its text content.",
            json!({"type": "object", "properties": {"url": {"type": "string", "description": "the page url"}}, "required": ["url"]}),
        ),
        "python" => (
            "Execute Python code and return its standard output.",
            json!({"type": "object", "properties": {"code": {"type": "string", "description": "Python source to run"}}, "required": ["code"]}),
        ),
        "scholar" => (
            "Search Google Scholar and return matching citations.",
            json!({"type": "object", "properties": {"query": {"type": "string", "description": "the scholarly search query"}}, "required": ["query"]}),
        ),
        _ => return None,
    };
    Some(ToolSchema { name: name.to_string(), description: description.to_string(), parameters })
}

pub fn memory_tool_schema() -> ToolSchema {
    let text = memory_tool_text();
    ToolSchema {
        name: "memory".into(),
        description: text.description,
        parameters: json!({
            "type": "object",
            "properties": {
                "pages": {"type": "array", "items": {"type": "integer"}, "maxItems": MAX_MEMORY_PAGES, "description": text.pages},
                "goal": {"type": "string", "description": text.goal}
            },
            "required": ["pages", "goal"]
        }),
    }
}
