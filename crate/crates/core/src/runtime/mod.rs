//! Agent loop, team runner and the meta-agent baselines.
//!
//! [`step_agent`] executes one model turn for one agent. [`run_team`] drives
//! N peers against a shared [`Hub`](crate::hub::Hub); [`run_naive`] and
//! [`run_swarm`] are the meta-agent coordination modes used as baselines.
//! Everything observable goes to the [`EventLog`].

mod agent;
pub mod events;
mod naive;
mod swarm;
mod team;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::aggregate::AggregationRule;
use crate::backends::{BackendError, ChatBackend, Sampling, ToolSchema};
use crate::tokens::{ByteQuarterCounter, TokenCounter};
use crate::toolenv::{ToolError, Toolbox};
use crate::types::{AgentId, CandidateAnswer, EpisodeRef, Task, WorkingContext};

pub use agent::{assemble_prompt, memory_tool, partial_report, run_agent, step_agent, StepEnv, NUDGE_OBSERVATION};
pub use events::{Event, EventKind, EventLog};
pub use naive::{parse_subtasks, run_naive, NaiveConfig, NAIVE_PLAN_PROMPT, NAIVE_SUB_PROMPT, NAIVE_SYNTH_PROMPT};
pub use swarm::{run_swarm, SwarmConfig, SWARM_META_PROMPT};
pub use team::{run_team, TeamOutcome, TeamResult};

pub const DEFAULT_CONTEXT_WINDOW: usize = 131_072;
pub const DEFAULT_WRITE_TRIGGER: usize = 65_536;
pub const DEFAULT_ROUND_BUDGET: u32 = 150;
pub const SUBAGENT_ROUND_BUDGET: u32 = 100;
pub const META_ROUND_BUDGET: u32 = 50;

pub const DEFAULT_AGENT_PROMPT: &str = "You are a research agent working on a hard question together with teammate agents that explore the same question in parallel. Use the tools to search for and verify evidence. Pages in Exploration Memory summarize earlier work by you and your teammates; call the memory tool with page numbers and a goal when their raw content would help.\n\nWhen you are confident, reply without a tool call in exactly this form:\nExact Answer: <answer>\nConfidence: <0-100>%";

/// True iff the context's total token size has reached the trigger.
pub fn check_write_trigger(context: &WorkingContext, trigger_tokens: usize, counter: &dyn TokenCounter) -> bool {
    context.token_size(counter) >= trigger_tokens
}

fn default_window() -> usize {
    DEFAULT_CONTEXT_WINDOW
}
fn default_trigger() -> usize {
    DEFAULT_WRITE_TRIGGER
}
fn default_budget() -> u32 {
    DEFAULT_ROUND_BUDGET
}
fn default_prompt() -> String {
    DEFAULT_AGENT_PROMPT.to_string()
}
fn default_true() -> bool {
    true
}
fn default_selector() -> AggregationRule {
    AggregationRule::Bon
}
fn default_hub_backend() -> String {
    "hub".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub agent_id: AgentId,
    pub backend_ref: String,
    #[serde(default = "default_prompt")]
    pub system_prompt: String,
    #[serde(default = "default_window")]
    pub context_window: usize,
    #[serde(default = "default_trigger")]
    pub write_trigger: usize,
    #[serde(default = "default_budget")]
    pub round_budget: u32,
    #[serde(default)]
    pub sampling: Sampling,
}

impl AgentConfig {
    pub fn new(agent_id: impl Into<AgentId>, backend_ref: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            backend_ref: backend_ref.into(),
            system_prompt: default_prompt(),
            context_window: DEFAULT_CONTEXT_WINDOW,
            write_trigger: DEFAULT_WRITE_TRIGGER,
            round_budget: DEFAULT_ROUND_BUDGET,
            sampling: Sampling::default(),
        }
    }

    pub fn with_budget(mut self, rounds: u32) -> Self {
        self.round_budget = rounds;
        self
    }

    pub fn with_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = prompt.into();
        self
    }

    pub fn validate(&self, path: &str) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if self.agent_id.as_str().trim().is_empty() {
            errs.push(FieldError::new(format!("{path}.agent_id"), "must not be empty"));
        }
        if self.backend_ref.trim().is_empty() {
            errs.push(FieldError::new(format!("{path}.backend_ref"), "must not be empty"));
        }
        if self.context_window == 0 {
            errs.push(FieldError::new(format!("{path}.context_window"), "must be positive"));
        }
        if self.write_trigger == 0 {
            errs.push(FieldError::new(format!("{path}.write_trigger"), "must be positive"));
        } else if self.write_trigger > self.context_window {
            errs.push(FieldError::new(
                format!("{path}.write_trigger"),
                format!("{} exceeds context_window {}", self.write_trigger, self.context_window),
            ));
        }
        if self.round_budget == 0 {
            errs.push(FieldError::new(format!("{path}.round_budget"), "must be positive"));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubBackends {
    #[serde(default = "default_hub_backend")]
    pub write_backend: String,
    #[serde(default = "default_hub_backend")]
    pub read_backend: String,
}

impl Default for HubBackends {
    fn default() -> Self {
        Self { write_backend: default_hub_backend(), read_backend: default_hub_backend() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamConfig {
    pub task: Task,
    pub agents: Vec<AgentConfig>,
    #[serde(default = "default_true")]
    pub hub_enabled: bool,
    #[serde(default = "default_selector")]
    pub selector: AggregationRule,
    #[serde(default)]
    pub hub: HubBackends,
}

impl TeamConfig {
    pub fn new(task: Task, agents: Vec<AgentConfig>) -> Self {
        Self { task, agents, hub_enabled: true, selector: AggregationRule::Bon, hub: HubBackends::default() }
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        if self.agents.is_empty() {
            errs.push(FieldError::new("team.agents", "needs at least one agent"));
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.agents.iter().enumerate() {
            let path = format!("team.agents[{i}]");
            errs.extend(a.validate(&path));
            if !seen.insert(a.agent_id.clone()) {
                errs.push(FieldError::new(format!("{path}.agent_id"), format!("duplicate agent id `{}`", a.agent_id)));
            }
            if is_reserved_id(a.agent_id.as_str()) {
                errs.push(FieldError::new(format!("{path}.agent_id"), format!("`{}` is reserved", a.agent_id)));
            }
        }
        if !self.selector.is_selector() {
            errs.push(FieldError::new("team.selector", format!("`{}` is a score, not a selector", self.selector)));
        }
        ValidationErrors::check(errs)
    }
}

/// Agent ids used by the runner itself.
pub fn is_reserved_id(id: &str) -> bool {
    matches!(id, "team" | "meta")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl FieldError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
pub struct ValidationErrors(pub Vec<FieldError>);

impl ValidationErrors {
    pub fn check(errs: Vec<FieldError>) -> Result<(), Self> {
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Self(errs))
        }
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Invalid(#[from] ValidationErrors),
    #[error("no backend named `{0}`")]
    UnknownBackend(String),
    #[error("hub storage: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Running,
    Answered,
    Exhausted,
    Failed,
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Running => "running",
            Self::Answered => "answered",
            Self::Exhausted => "exhausted",
            Self::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub config: AgentConfig,
    pub context: WorkingContext,
    pub rounds_used: u32,
    pub tool_calls: u32,
    pub status: AgentStatus,
    pub final_answer: Option<CandidateAnswer>,
    pub error: Option<String>,
    pub episodes_written: u32,
    /// Index the next trajectory step will get.
    pub next_step: usize,
    /// Teammate notes dropped to keep the prompt inside the window.
    pub dropped_notes: BTreeSet<EpisodeRef>,
    /// Raw text of the most recent model reply.
    pub last_content: String,
}

impl AgentState {
    pub fn new(config: AgentConfig, question: &str) -> Self {
        let preamble = format!("{}\n\nQuestion: {}", config.system_prompt.trim_end(), question.trim());
        Self {
            config,
            context: WorkingContext::new(preamble),
            rounds_used: 0,
            tool_calls: 0,
            status: AgentStatus::Running,
            final_answer: None,
            error: None,
            episodes_written: 0,
            next_step: 0,
            dropped_notes: BTreeSet::new(),
            last_content: String::new(),
        }
    }

    pub fn agent_id(&self) -> &AgentId {
        &self.config.agent_id
    }

    pub fn outcome(&self) -> AgentOutcome {
        AgentOutcome {
            agent_id: self.config.agent_id.clone(),
            backend_ref: self.config.backend_ref.clone(),
            status: self.status,
            rounds_used: self.rounds_used,
            round_budget: self.config.round_budget,
            tool_calls: self.tool_calls,
            episodes_written: self.episodes_written,
            final_answer: self.final_answer.clone(),
            error: self.error.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent_id: AgentId,
    pub backend_ref: String,
    pub status: AgentStatus,
    pub rounds_used: u32,
    pub round_budget: u32,
    pub tool_calls: u32,
    pub episodes_written: u32,
    pub final_answer: Option<CandidateAnswer>,
    pub error: Option<String>,
}

/// Extra tools offered to one agent on top of the task tools (the swarm meta-agent's dispatch tools).
pub trait ToolHandler: Send + Sync {
    fn schemas(&self) -> Vec<ToolSchema>;
    fn handles(&self, name: &str) -> bool;
    fn invoke(&self, name: &str, args: &Value) -> Result<String, ToolError>;
}

/// Named model backends available to a run.
#[derive(Clone, Default)]
pub struct Backends {
    map: BTreeMap<String, Arc<dyn ChatBackend>>,
}

impl Backends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        self.map.insert(name.into(), backend);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) {
        self.map.insert(name.into(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ChatBackend>, RuntimeError> {
        self.map.get(name).cloned().ok_or_else(|| RuntimeError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.map.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One turn per running agent per cycle, in config order. Reproducible.
    #[default]
    RoundRobin,
    /// One thread per agent; hub access stays linearizable, ordering does not repeat across runs.
    Concurrent,
}

/// Everything a run needs besides its config.
#[derive(Clone)]
pub struct RunEnv {
    pub backends: Backends,
    pub toolbox: Toolbox,
    pub counter: Arc<dyn TokenCounter>,
    /// Where the hub mirrors raw episodes and notes, if anywhere.
    pub hub_dir: Option<std::path::PathBuf>,
    pub schedule: Schedule,
}

impl RunEnv {
    pub fn new(backends: Backends, toolbox: Toolbox) -> Self {
        Self { backends, toolbox, counter: Arc::new(ByteQuarterCounter), hub_dir: None, schedule: Schedule::RoundRobin }
    }
}

pub(crate) fn backend_error_text(e: &BackendError) -> String {
    format!("{} ({})", e, e.kind())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ToolProfile;

    fn task() -> Task {
        Task { id: "t".into(), question: "q?".into(), gold_answer: None, tool_profile: ToolProfile::Web }
    }

    #[test]
    fn trigger_boundary_is_inclusive() {
        let mut ctx = WorkingContext::new("");
        ctx.active.push(crate::types::TrajectoryStep {
            index: 0,
            action: crate::types::ActionRecord::thought(""),
            observation: String::new(),
            token_cost: 65_536,
        });
        assert!(check_write_trigger(&ctx, 65_536, &ByteQuarterCounter));
        ctx.active[0].token_cost = 65_535;
        assert!(!check_write_trigger(&ctx, 65_536, &ByteQuarterCounter));
    }

    #[test]
    fn defaults_follow_the_budgets() {
        let a = AgentConfig::new("A", "m");
        assert_eq!((a.context_window, a.write_trigger, a.round_budget), (131_072, 65_536, 150));
    }

    #[test]
    fn validation_names_fields() {
        let mut bad = AgentConfig::new("A", "m");
        bad.write_trigger = 200_000;
        let cfg = TeamConfig::new(task(), vec![bad, AgentConfig::new("A", "m").with_budget(0)]);
        let errs = cfg.validate().unwrap_err().0;
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, ["team.agents[0].write_trigger", "team.agents[1].round_budget", "team.agents[1].agent_id"]);
        let mut scored = TeamConfig::new(task(), vec![AgentConfig::new("A", "m")]);
        scored.selector = AggregationRule::Avg;
        assert_eq!(scored.validate().unwrap_err().0[0].path, "team.selector");
        assert!(TeamConfig::new(task(), vec![]).validate().is_err());
    }
}
