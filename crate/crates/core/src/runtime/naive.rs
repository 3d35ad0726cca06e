use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aggregate::AggregationRule;
use crate::backends::{ChatMessage, ChatRequest};
use crate::types::Task;

use super::agent::{partial_report, run_agent, StepEnv};
use super::events::{EventKind, EventLog};
use super::team::{announce, finish, TeamResult};
use super::{backend_error_text, AgentConfig, AgentState, AgentStatus, RunEnv, RuntimeError, FieldError, ValidationErrors, META_ROUND_BUDGET, SUBAGENT_ROUND_BUDGET};

pub const NAIVE_PLAN_PROMPT: &str = "You coordinate a team of research subagents. Split the question below into exactly {k} independent subtasks that together cover what is needed to answer it. Reply with a JSON array of {k} strings, one subtask description each, and nothing else.";

pub const NAIVE_SUB_PROMPT: &str = "You are a research subagent. Investigate the subtask below with the tools and report what you find. When done, reply without a tool call in exactly this form:\nExact Answer: <your finding>\nConfidence: <0-100>%";

pub const NAIVE_SYNTH_PROMPT: &str = "You coordinate a team of research subagents. Their reports on the subtasks of the question are below. Combine them into one answer. Reply without a tool call in exactly this form:\nExact Answer: <answer>\nConfidence: <0-100>%";

/// Report length handed from a subagent to the meta-agent.
const REPORT_TOKENS: usize = 4_000;

fn default_k() -> usize {
    2
}
fn default_meta_budget() -> u32 {
    META_ROUND_BUDGET
}
fn default_sub_budget() -> u32 {
    SUBAGENT_ROUND_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaiveConfig {
    pub task: Task,
    #[serde(default = "default_k")]
    pub k: usize,
    pub meta_backend: String,
    pub sub_backend: String,
    #[serde(default = "default_meta_budget")]
    pub meta_rounds: u32,
    #[serde(default = "default_sub_budget")]
    pub sub_rounds: u32,
    #[serde(default = "super::default_window")]
    pub context_window: usize,
}

impl NaiveConfig {
    pub fn new(task: Task, meta_backend: impl Into<String>, sub_backend: impl Into<String>) -> Self {
        Self {
            task,
            k: 2,
            meta_backend: meta_backend.into(),
            sub_backend: sub_backend.into(),
            meta_rounds: META_ROUND_BUDGET,
            sub_rounds: SUBAGENT_ROUND_BUDGET,
            context_window: super::DEFAULT_CONTEXT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        if self.k == 0 {
            errs.push(FieldError::new("naive.k", "must be at least 1"));
        }
        if self.meta_rounds < 2 {
            errs.push(FieldError::new("naive.meta_rounds", "needs one planning and at least one synthesis round"));
        }
        if self.sub_rounds == 0 {
            errs.push(FieldError::new("naive.sub_rounds", "must be positive"));
        }
        if self.context_window == 0 {
            errs.push(FieldError::new("naive.context_window", "must be positive"));
        }
        ValidationErrors::check(errs)
    }
}

/// Extracts subtask descriptions: a JSON array of strings (possibly inside a
/// code fence), else numbered or bulleted lines.
pub fn parse_subtasks(content: &str) -> Vec<String> {
    let trimmed = content.trim();
    let json_part = match (trimmed.find('['), trimmed.rfind(']')) {
        (Some(a), Some(b)) if a < b => Some(&trimmed[a..=b]),
        _ => None,
    };
    if let Some(Ok(Value::Array(items))) = json_part.map(serde_json::from_str::<Value>) {
        let tasks: Vec<String> = items.iter().filter_map(Value::as_str).map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if !tasks.is_empty() {
            return tasks;
        }
    }
    trimmed
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let rest = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let stripped = if rest.len() < l.len() {
                rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?
            } else {
                l.strip_prefix("- ").or_else(|| l.strip_prefix("* "))?
            };
            let s = stripped.trim();
            (!s.is_empty()).then(|| s.to_string())
        })
        .collect()
}

/// Plan, parallel search, aggregate: the meta-agent splits the task into K
/// subtasks, K isolated subagents work them, and the meta-agent combines
/// their reports. The meta-agent's round budget covers planning and synthesis.
pub fn run_naive(config: &NaiveConfig, env: &RunEnv, log: &EventLog) -> Result<TeamResult, RuntimeError> {
    config.validate()?;
    let meta_backend = env.backends.get(&config.meta_backend)?;
    let sub_backend = env.backends.get(&config.sub_backend)?;
    let task = &config.task;
    let toolbox = crate::toolenv::Toolbox { profile: task.tool_profile, ..env.toolbox.clone() };
    let counter = env.counter.as_ref();

    log.emit(
        "team",
        EventKind::Status,
        json!({"event": "start", "mode": "naive", "task_id": task.id, "question": task.question, "k": config.k}),
    );

    let mut meta_cfg = AgentConfig::new("meta", config.meta_backend.clone()).with_budget(config.meta_rounds).with_prompt(NAIVE_SYNTH_PROMPT);
    meta_cfg.context_window = config.context_window;
    meta_cfg.write_trigger = config.context_window;
    let mut meta = AgentState::new(meta_cfg.clone(), &task.question);
    announce(log, &meta, "meta");

    // Planning: one meta round.
    let plan_prompt = NAIVE_PLAN_PROMPT.replace("{k}", &config.k.to_string());
    let request = ChatRequest::new("", vec![ChatMessage::system(plan_prompt), ChatMessage::user(format!("Question: {}", task.question))])
        .with_tag("agent", "meta")
        .with_tag("turn", 1)
        .with_tag("role", "meta")
        .with_tag("phase", "plan");
    let prompt_tokens: usize = request.messages.iter().map(|m| counter.count(&m.content)).sum();
    let plan = meta_backend.chat(&request);
    meta.rounds_used = 1;
    let (content, failure) = match plan {
        Ok(r) => {
            let subtasks = parse_subtasks(&r.content);
            let failure = (subtasks.len() < config.k)
                .then(|| format!("meta-agent produced {} subtask(s), {} required", subtasks.len(), config.k));
            (r.content, failure.map(Err).unwrap_or(Ok(subtasks)))
        }
        Err(e) => (String::new(), Err(format!("meta-agent planning call failed: {}", backend_error_text(&e)))),
    };
    log.emit(
        "meta",
        EventKind::Turn,
        json!({
            "turn": 1,
            "role": "meta",
            "phase": "plan",
            "prompt_tokens": prompt_tokens,
            "context_window": config.context_window,
            "plan": content,
            "subtasks": failure.as_ref().ok(),
        }),
    );
    let subtasks = match failure {
        Ok(mut s) => {
            s.truncate(config.k);
            s
        }
        Err(reason) => {
            meta.status = AgentStatus::Failed;
            meta.error = Some(reason.clone());
            log.emit("meta", EventKind::Status, json!({"status": "failed", "rounds_used": meta.rounds_used, "round_budget": meta.config.round_budget, "error": reason, "transcript": content}));
            return Ok(finish(log, "naive", &task.id, AggregationRule::Bon, vec![meta.outcome()], vec![], Some(reason)));
        }
    };

    // Parallel search: K isolated subagents, no hub.
    let mut subs: Vec<AgentState> = subtasks
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let mut cfg = AgentConfig::new(format!("sub-{}", i + 1), config.sub_backend.clone()).with_budget(config.sub_rounds).with_prompt(NAIVE_SUB_PROMPT);
            cfg.context_window = config.context_window;
            cfg.write_trigger = config.context_window;
            AgentState::new(cfg, &format!("{st}\n\nOverall question: {}", task.question))
        })
        .collect();
    for s in &subs {
        announce(log, s, "sub");
    }
    let sub_env = StepEnv {
        backend: sub_backend.as_ref(),
        hub: None,
        tools: Some(&toolbox),
        extra: None,
        counter,
        log,
        role: "sub",
        tags: &[("phase", "search")],
    };
    loop {
        let mut progressed = false;
        for s in subs.iter_mut().filter(|s| s.status == AgentStatus::Running) {
            super::agent::step_agent(s, &sub_env);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }

    // Aggregate: the meta-agent reads every report and answers.
    let reports: Vec<String> = subs
        .iter()
        .zip(&subtasks)
        .enumerate()
        .map(|(i, (s, st))| format!("Subtask {} ({}): {}\nReport:\n{}", i + 1, s.status, st, partial_report(s, counter, REPORT_TOKENS)))
        .collect();
    let synth_question = format!("{}\n\nSubagent reports:\n\n{}", task.question, reports.join("\n\n"));
    let mut synth = AgentState::new(meta_cfg, &synth_question);
    synth.rounds_used = meta.rounds_used;
    synth.next_step = 1;
    let meta_env = StepEnv { backend: meta_backend.as_ref(), hub: None, tools: None, extra: None, counter, log, role: "meta", tags: &[("phase", "synthesize")] };
    run_agent(&mut synth, &meta_env);

    let mut outcomes = vec![synth.outcome()];
    outcomes.extend(subs.iter().map(AgentState::outcome));
    let candidates = synth.final_answer.iter().cloned().collect();
    Ok(finish(log, "naive", &task.id, AggregationRule::Bon, outcomes, candidates, None))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subtasks_from_json_or_lines() {
        assert_eq!(parse_subtasks("[\"find the store\", \"find the year\"]"), ["find the store", "find the year"]);
        assert_eq!(parse_subtasks("```json\n[\"a\", \"b\"]\n```"), ["a", "b"]);
        assert_eq!(parse_subtasks("Plan:\n1. first thing\n2) second thing\n- third"), ["first thing", "second thing", "third"]);
        assert!(parse_subtasks("no idea").is_empty());
    }
}
