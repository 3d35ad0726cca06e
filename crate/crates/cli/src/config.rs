//! TOML run configuration. See `docs/config.md` for an annotated example.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use fugue_core::aggregate::AggregationRule;
use fugue_core::backends::{ChatBackend, EndpointConfig, Rule, Script, ScriptedBackend, WireClient};
use fugue_core::runtime::{
    AgentConfig, Backends, FieldError, HubBackends, NaiveConfig, RunEnv, Schedule, SwarmConfig, TeamConfig, ValidationErrors, DEFAULT_CONTEXT_WINDOW,
    META_ROUND_BUDGET, SUBAGENT_ROUND_BUDGET,
};
use fugue_core::toolenv::{Corpus, Document, HttpWebProvider, StubEntry, StubTable, Toolbox, WebProvider, DEFAULT_TOP_K};
use fugue_core::types::Task;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(ValidationErrors),
}

impl From<ValidationErrors> for ConfigError {
    fn from(e: ValidationErrors) -> Self {
        ConfigError::Invalid(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Team,
    Naive,
    Swarm,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Team => "team",
            Mode::Naive => "naive",
            Mode::Swarm => "swarm",
        })
    }
}

/// A model endpoint. Scripted backends carry their rules inline after
/// [`RunConfig::resolve`]; `openai` backends name their key by env var only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Scripted {
        /// JSON file holding `{"rules": [...]}`, relative to the config file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
        #[serde(default)]
        rules: Vec<Rule>,
    },
    Openai(EndpointConfig),
}

impl BackendSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendSpec::Scripted { .. } => "scripted",
            BackendSpec::Openai(_) => "openai",
        }
    }

    pub fn model(&self) -> Option<&str> {
        match self {
            BackendSpec::Openai(c) => Some(&c.model),
            BackendSpec::Scripted { .. } => None,
        }
    }
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_tool_timeout() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsConfig {
    /// JSONL corpus of `{url, title, body}` documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub documents: Vec<Document>,
    /// JSONL of `{tool, input, output}` canned python/scholar outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stubs: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stub_entries: Vec<StubEntry>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Live search endpoint; replaces the corpus when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_url: Option<String>,
    #[serde(default = "default_tool_timeout")]
    pub timeout_ms: u64,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            documents: Vec::new(),
            stubs: None,
            stub_entries: Vec::new(),
            top_k: DEFAULT_TOP_K,
            search_url: None,
            timeout_ms: default_tool_timeout(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_selector() -> AggregationRule {
    AggregationRule::Bon
}
fn default_k() -> usize {
    2
}
fn default_meta() -> u32 {
    META_ROUND_BUDGET
}
fn default_sub() -> u32 {
    SUBAGENT_ROUND_BUDGET
}
fn default_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamSection {
    pub agents: Vec<AgentConfig>,
    #[serde(default = "default_true")]
    pub hub_enabled: bool,
    #[serde(default = "default_selector")]
    pub selector: AggregationRule,
    #[serde(default)]
    pub hub: HubBackends,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaiveSection {
    #[serde(default = "default_k")]
    pub k: usize,
    pub meta_backend: String,
    pub sub_backend: String,
    #[serde(default = "default_meta")]
    pub meta_rounds: u32,
    #[serde(default = "default_sub")]
    pub sub_rounds: u32,
    #[serde(default = "default_window")]
    pub context_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmSection {
    pub meta_backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_backend: Option<String>,
    #[serde(default = "default_meta")]
    pub meta_rounds: u32,
    #[serde(default = "default_sub")]
    pub sub_rounds: u32,
    #[serde(default = "default_window")]
    pub context_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    pub task: Task,
    #[serde(default)]
    pub tools: ToolsConfig,
    pub backends: BTreeMap<String, BackendSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<TeamSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naive: Option<NaiveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swarm: Option<SwarmSection>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses, inlines referenced files, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::parse(&read(path)?)?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every file reference with its contents, so the config alone
    /// reproduces the run.
    pub fn resolve(&mut self, base: &Path) -> Result<(), ConfigError> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut errs = Vec::new();
        if let Some(p) = self.tools.corpus.take() {
            match Corpus::from_jsonl(&read(&at(&p))?) {
                Ok(c) => self.tools.documents.extend(c.documents().cloned()),
                Err(e) => errs.push(FieldError::new("tools.corpus", e.to_string())),
            }
        }
        if let Some(p) = self.tools.stubs.take() {
            let text = read(&at(&p))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                match serde_json::from_str::<StubEntry>(line) {
                    Ok(e) => self.tools.stub_entries.push(e),
                    Err(e) => errs.push(FieldError::new("tools.stubs", format!("line {}: {e}", i + 1))),
                }
            }
        }
        for (name, spec) in &mut self.backends {
            if let BackendSpec::Scripted { script, rules } = spec {
                if let Some(p) = script.take() {
                    match serde_json::from_str::<Script>(&read(&at(&p))?) {
                        Ok(s) => rules.extend(s.rules),
                        Err(e) => errs.push(FieldError::new(format!("backends.{name}.script"), e.to_string())),
                    }
                }
            }
        }
        ValidationErrors::check(errs).map_err(ConfigError::Invalid)
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        let backend = |path: String, name: &str, errs: &mut Vec<FieldError>| {
            if !self.backends.contains_key(name) {
                errs.push(FieldError::new(path, format!("unknown backend `{name}`")));
            }
        };
        let section_missing = |errs: &mut Vec<FieldError>, s: &str| errs.push(FieldError::new(s, format!("required when mode = \"{}\"", self.mode)));
        if self.task.question.trim().is_empty() {
            errs.push(FieldError::new("task.question", "must not be empty"));
        }
        if self.tools.top_k == 0 {
            errs.push(FieldError::new("tools.top_k", "must be positive"));
        }
        for (name, spec) in &self.backends {
            if let BackendSpec::Scripted { script: None, rules } = spec {
                if rules.is_empty() {
                    errs.push(FieldError::new(format!("backends.{name}"), "scripted backend has no rules"));
                }
            }
        }
        match self.mode {
            Mode::Team => match self.team_config() {
                None => section_missing(&mut errs, "team"),
                Some(tc) => {
                    if let Err(e) = tc.validate() {
                        errs.extend(e.0);
                    }
                    for (i, a) in tc.agents.iter().enumerate() {
                        backend(format!("team.agents[{i}].backend_ref"), &a.backend_ref, &mut errs);
                    }
                    if tc.hub_enabled {
                        backend("team.hub.write_backend".into(), &tc.hub.write_backend, &mut errs);
                        backend("team.hub.read_backend".into(), &tc.hub.read_backend, &mut errs);
                    }
                }
            },
            Mode::Naive => match self.naive_config() {
                None => section_missing(&mut errs, "naive"),
                Some(nc) => {
                    if let Err(e) = nc.validate() {
                        errs.extend(e.0);
                    }
                    backend("naive.meta_backend".into(), &nc.meta_backend, &mut errs);
                    backend("naive.sub_backend".into(), &nc.sub_backend, &mut errs);
                }
            },
            Mode::Swarm => match self.swarm_config() {
                None => section_missing(&mut errs, "swarm"),
                Some(sc) => {
                    if let Err(e) = sc.validate() {
                        errs.extend(e.0);
                    }
                    backend("swarm.meta_backend".into(), &sc.meta_backend, &mut errs);
                    if let Some(sb) = &sc.sub_backend {
                        backend("swarm.sub_backend".into(), sb, &mut errs);
                    }
                }
            },
        }
        ValidationErrors::check(errs)
    }

    pub fn team_config(&self) -> Option<TeamConfig> {
        self.team.as_ref().map(|t| TeamConfig {
            task: self.task.clone(),
            agents: t.agents.clone(),
            hub_enabled: t.hub_enabled,
            selector: t.selector,
            hub: t.hub.clone(),
        })
    }

    pub fn naive_config(&self) -> Option<NaiveConfig> {
        self.naive.as_ref().map(|n| NaiveConfig {
            task: self.task.clone(),
            k: n.k,
            meta_backend: n.meta_backend.clone(),
            sub_backend: n.sub_backend.clone(),
            meta_rounds: n.meta_rounds,
            sub_rounds: n.sub_rounds,
            context_window: n.context_window,
        })
    }

    pub fn swarm_config(&self) -> Option<SwarmConfig> {
        self.swarm.as_ref().map(|s| SwarmConfig {
            task: self.task.clone(),
            meta_backend: s.meta_backend.clone(),
            sub_backend: s.sub_backend.clone(),
            meta_rounds: s.meta_rounds,
            sub_rounds: s.sub_rounds,
            context_window: s.context_window,
        })
    }

    /// Whether every backend is scripted (and the run therefore replayable).
    pub fn is_scripted(&self) -> bool {
        self.backends.values().all(|b| matches!(b, BackendSpec::Scripted { .. })) && self.tools.search_url.is_none()
    }

    /// The write trigger shared by all team agents, if there is one.
    pub fn write_trigger(&self) -> Option<usize> {
        let agents = &self.team.as_ref()?.agents;
        let first = agents.first()?.write_trigger;
        agents.iter().all(|a| a.write_trigger == first).then_some(first)
    }

    /// Instantiates backends and tools. Must be called on a resolved config.
    pub fn build_env(&self) -> Result<RunEnv, ConfigError> {
        let mut backends = Backends::new();
        for (name, spec) in &self.backends {
            let b: Arc<dyn ChatBackend> = match spec {
                BackendSpec::Scripted { rules, .. } => Arc::new(ScriptedBackend::new(name.clone(), Script { rules: rules.clone() })),
                BackendSpec::Openai(cfg) => Arc::new(
                    WireClient::new(name.clone(), cfg.clone()).map_err(|e| ConfigError::Invalid(ValidationErrors(vec![FieldError::new(format!("backends.{name}"), e.to_string())])))?,
                ),
            };
            backends.insert(name.clone(), b);
        }
        let web: Arc<dyn WebProvider> = match &self.tools.search_url {
            Some(url) => Arc::new(
                HttpWebProvider::new(url.clone(), Duration::from_millis(self.tools.timeout_ms))
                    .map_err(|e| ConfigError::Invalid(ValidationErrors(vec![FieldError::new("tools.search_url", e.to_string())])))?,
            ),
            None => Arc::new(Corpus::new(self.tools.documents.clone())),
        };
        let mut toolbox = Toolbox::new(self.task.tool_profile, web, Arc::new(StubTable::new(self.tools.stub_entries.clone())));
        toolbox.top_k = self.tools.top_k;
        let mut env = RunEnv::new(backends, toolbox);
        env.schedule = self.schedule;
        Ok(env)
    }
}
