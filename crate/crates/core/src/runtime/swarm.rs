use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aggregate::AggregationRule;
use crate::backends::{ChatBackend, ToolSchema};
use crate::tokens::TokenCounter;
use crate::toolenv::{ToolError, Toolbox};
use crate::types::{CandidateAnswer, Task};

use super::agent::{partial_report, run_agent, StepEnv};
use super::events::{EventKind, EventLog};
use super::team::{announce, finish, TeamResult};
use super::{
    is_reserved_id, AgentConfig, AgentOutcome, AgentState, AgentStatus, FieldError, RunEnv, RuntimeError, ToolHandler, ValidationErrors, META_ROUND_BUDGET,
    SUBAGENT_ROUND_BUDGET,
};

pub const SWARM_META_PROMPT: &str = "You coordinate research subagents. Use create_subagent to define a specialist with a stable identifier and a system prompt, and assign_task to give one of your subagents a concrete task; each assignment returns that subagent's report. Subagents cannot see each other, so pass along whatever context a task needs. When you can answer, reply without a tool call in exactly this form:\nExact Answer: <answer>\nConfidence: <0-100>%";

const REPORT_TOKENS: usize = 4_000;

fn default_meta_budget() -> u32 {
    META_ROUND_BUDGET
}
fn default_sub_budget() -> u32 {
    SUBAGENT_ROUND_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    pub task: Task,
    pub meta_backend: String,
    /// Backend for subagents; defaults to the meta backend.
    #[serde(default)]
    pub sub_backend: Option<String>,
    #[serde(default = "default_meta_budget")]
    pub meta_rounds: u32,
    /// Cumulative cap per subagent identifier across all its assignments.
    #[serde(default = "default_sub_budget")]
    pub sub_rounds: u32,
    #[serde(default = "super::default_window")]
    pub context_window: usize,
}

impl SwarmConfig {
    pub fn new(task: Task, meta_backend: impl Into<String>) -> Self {
        Self {
            task,
            meta_backend: meta_backend.into(),
            sub_backend: None,
            meta_rounds: META_ROUND_BUDGET,
            sub_rounds: SUBAGENT_ROUND_BUDGET,
            context_window: super::DEFAULT_CONTEXT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        if self.meta_rounds == 0 {
            errs.push(FieldError::new("swarm.meta_rounds", "must be positive"));
        }
        if self.sub_rounds == 0 {
            errs.push(FieldError::new("swarm.sub_rounds", "must be positive"));
        }
        if self.context_window == 0 {
            errs.push(FieldError::new("swarm.context_window", "must be positive"));
        }
        ValidationErrors::check(errs)
    }
}

struct Subagent {
    system_prompt: String,
    rounds_used: u32,
    tool_calls: u32,
    assignments: u32,
    status: Option<AgentStatus>,
    /// Answer from the most recent assignment that ended with one.
    last_answer: Option<CandidateAnswer>,
}

/// `create_subagent` / `assign_task`, run synchronously inside the meta-agent's turn.
struct SwarmTools<'a> {
    backend: &'a dyn ChatBackend,
    toolbox: &'a Toolbox,
    counter: &'a dyn TokenCounter,
    log: &'a EventLog,
    sub_rounds: u32,
    context_window: usize,
    registry: Mutex<BTreeMap<String, Subagent>>,
}

fn str_arg<'v>(args: &'v Value, key: &str) -> Result<&'v str, ToolError> {
    args.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ToolError::Arguments(format!("missing string argument `{key}`")))
}

pub fn swarm_tool_schemas() -> Vec<ToolSchema> {
    vec![
        ToolSchema {
            name: "create_subagent".into(),
            description: "Create a specialized subagent with a stable identifier and its own system prompt. The identifier can be reused for later assignments.".into(),
            parameters: json!({"type": "object", "properties": {
                "identifier": {"type": "string", "description": "stable name for the subagent"},
                "system_prompt": {"type": "string", "description": "role and instructions for the subagent"}
            }, "required": ["identifier", "system_prompt"]}),
        },
        ToolSchema {
            name: "assign_task".into(),
            description: "Dispatch a concrete task to an existing subagent and return its report.".into(),
            parameters: json!({"type": "object", "properties": {
                "identifier": {"type": "string", "description": "identifier of an existing subagent"},
                "task_description": {"type": "string", "description": "what the subagent should do"}
            }, "required": ["identifier", "task_description"]}),
        },
    ]
}

impl SwarmTools<'_> {
    fn create(&self, args: &Value) -> Result<String, ToolError> {
        let id = str_arg(args, "identifier")?;
        let prompt = str_arg(args, "system_prompt")?;
        if is_reserved_id(id) {
            return Err(ToolError::Arguments(format!("identifier `{id}` is reserved")));
        }
        let mut reg = self.registry.lock().expect("swarm registry poisoned");
        if reg.contains_key(id) {
            return Err(ToolError::Arguments(format!("subagent `{id}` already exists; assign tasks to it directly")));
        }
        reg.insert(id.to_string(), Subagent { system_prompt: prompt.to_string(), rounds_used: 0, tool_calls: 0, assignments: 0, status: None, last_answer: None });
        self.log.emit(id, EventKind::Status, json!({"status": "created", "role": "sub", "round_budget": self.sub_rounds}));
        Ok(format!("Subagent `{id}` created."))
    }

    fn assign(&self, args: &Value) -> Result<String, ToolError> {
        let id = str_arg(args, "identifier")?;
        let description = str_arg(args, "task_description")?;
        let (prompt, used, ordinal) = {
            let mut reg = self.registry.lock().expect("swarm registry poisoned");
            let Some(sub) = reg.get_mut(id) else {
                return Err(ToolError::Arguments(format!("unknown subagent `{id}`; create it first")));
            };
            if sub.rounds_used >= self.sub_rounds {
                return Err(ToolError::Arguments(format!("subagent `{id}` has used its {} rounds", self.sub_rounds)));
            }
            sub.assignments += 1;
            (sub.system_prompt.clone(), sub.rounds_used, sub.assignments)
        };
        let mut cfg = AgentConfig::new(id, "sub").with_budget(self.sub_rounds).with_prompt(prompt);
        cfg.context_window = self.context_window;
        cfg.write_trigger = self.context_window;
        let mut state = AgentState::new(cfg, description);
        state.rounds_used = used;
        let assignment = ordinal.to_string();
        let tags = [("assignment", assignment.as_str())];
        let env = StepEnv {
            backend: self.backend,
            hub: None,
            tools: Some(self.toolbox),
            extra: None,
            counter: self.counter,
            log: self.log,
            role: "sub",
            tags: &tags,
        };
        self.log.emit(id, EventKind::Status, json!({"status": "assigned", "assignment": ordinal, "task": description, "rounds_used": used}));
        run_agent(&mut state, &env);
        let report = partial_report(&state, self.counter, REPORT_TOKENS);
        let mut reg = self.registry.lock().expect("swarm registry poisoned");
        let sub = reg.get_mut(id).expect("registered above");
        sub.rounds_used = state.rounds_used;
        sub.tool_calls += state.tool_calls;
        sub.status = Some(state.status);
        if let Some(a) = state.final_answer.take() {
            sub.last_answer = Some(a);
        }
        Ok(format!("Report from `{id}` (assignment {ordinal}, {}):\n{report}", state.status))
    }

    /// Subagents that ran at least once.
    fn outcomes(&self, backend_ref: &str) -> Vec<AgentOutcome> {
        let reg = self.registry.lock().expect("swarm registry poisoned");
        reg.iter()
            .filter_map(|(id, sub)| {
                Some(AgentOutcome {
                    agent_id: id.as_str().into(),
                    backend_ref: backend_ref.to_string(),
                    status: sub.status?,
                    rounds_used: sub.rounds_used,
                    round_budget: self.sub_rounds,
                    tool_calls: sub.tool_calls,
                    episodes_written: 0,
                    final_answer: sub.last_answer.clone(),
                    error: None,
                })
            })
            .collect()
    }
}

impl ToolHandler for SwarmTools<'_> {
    fn schemas(&self) -> Vec<ToolSchema> {
        swarm_tool_schemas()
    }

    fn handles(&self, name: &str) -> bool {
        matches!(name, "create_subagent" | "assign_task")
    }

    fn invoke(&self, name: &str, args: &Value) -> Result<String, ToolError> {
        match name {
            "create_subagent" => self.create(args),
            "assign_task" => self.assign(args),
            other => Err(ToolError::Unknown(other.to_string())),
        }
    }
}

/// Meta-agent with dynamic subagent creation and task assignment. Subagents
/// never touch the hub; their reports reach only the meta-agent.
pub fn run_swarm(config: &SwarmConfig, env: &RunEnv, log: &EventLog) -> Result<TeamResult, RuntimeError> {
    config.validate()?;
    let meta_backend = env.backends.get(&config.meta_backend)?;
    let sub_backend = env.backends.get(config.sub_backend.as_deref().unwrap_or(&config.meta_backend))?;
    let task = &config.task;
    let toolbox = Toolbox { profile: task.tool_profile, ..env.toolbox.clone() };
    let counter = env.counter.as_ref();

    log.emit("team", EventKind::Status, json!({"event": "start", "mode": "swarm", "task_id": task.id, "question": task.question}));

    let tools = SwarmTools {
        backend: sub_backend.as_ref(),
        toolbox: &toolbox,
        counter,
        log,
        sub_rounds: config.sub_rounds,
        context_window: config.context_window,
        registry: Mutex::new(BTreeMap::new()),
    };
    let mut cfg = AgentConfig::new("meta", config.meta_backend.clone()).with_budget(config.meta_rounds).with_prompt(SWARM_META_PROMPT);
    cfg.context_window = config.context_window;
    cfg.write_trigger = config.context_window;
    let mut meta = AgentState::new(cfg, &task.question);
    announce(log, &meta, "meta");
    let meta_env = StepEnv { backend: meta_backend.as_ref(), hub: None, tools: None, extra: Some(&tools), counter, log, role: "meta", tags: &[] };
    run_agent(&mut meta, &meta_env);

    let mut outcomes = vec![meta.outcome()];
    outcomes.extend(tools.outcomes(config.sub_backend.as_deref().unwrap_or(&config.meta_backend)));
    let candidates = meta.final_answer.iter().cloned().collect();
    Ok(finish(log, "swarm", &task.id, AggregationRule::Bon, outcomes, candidates, None))
}
