use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregate::{select, AggregationRule, NormalizedMatch};
use crate::backends::ChatBackend;
use crate::hub::{Hub, HubPersistence};
use crate::types::CandidateAnswer;

use super::agent::{step_agent, StepEnv};
use super::events::{EventKind, EventLog};
use super::{AgentOutcome, AgentState, AgentStatus, RunEnv, RuntimeError, Schedule, TeamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeamOutcome {
    Selected,
    /// No agent produced an answer.
    EmptyTeam,
    /// The coordination itself broke down (e.g. the meta-agent produced no plan).
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamResult {
    pub mode: String,
    pub task_id: String,
    pub selector: AggregationRule,
    pub agents: Vec<AgentOutcome>,
    pub candidates: Vec<CandidateAnswer>,
    pub selected: Option<CandidateAnswer>,
    pub outcome: TeamOutcome,
    pub hub_writes: usize,
    pub hub_reads: usize,
    pub total_rounds: u32,
}

impl TeamResult {
    pub fn any_failed(&self) -> bool {
        self.agents.iter().any(|a| a.status == AgentStatus::Failed) || matches!(self.outcome, TeamOutcome::Failed { .. })
    }
}

pub(crate) fn hub_counts(log: &EventLog) -> (usize, usize) {
    let events = log.events();
    let writes = events.iter().filter(|e| e.kind == EventKind::HubWrite).count();
    let reads = events.iter().filter(|e| e.kind == EventKind::HubRead).count();
    (writes, reads)
}

pub(crate) fn finish(
    log: &EventLog,
    mode: &str,
    task_id: &str,
    selector: AggregationRule,
    agents: Vec<AgentOutcome>,
    candidates: Vec<CandidateAnswer>,
    failure: Option<String>,
) -> TeamResult {
    let selected = select(selector, &candidates, &NormalizedMatch).ok().cloned();
    let outcome = match (&failure, &selected) {
        (Some(reason), _) => TeamOutcome::Failed { reason: reason.clone() },
        (None, Some(_)) => TeamOutcome::Selected,
        (None, None) => TeamOutcome::EmptyTeam,
    };
    let (hub_writes, hub_reads) = hub_counts(log);
    let total_rounds = agents.iter().map(|a| a.rounds_used).sum();
    log.emit(
        "team",
        EventKind::Status,
        json!({
            "event": "end",
            "mode": mode,
            "selector": selector.to_string(),
            "outcome": outcome,
            "selected": selected,
            "candidates": candidates.len(),
            "total_rounds": total_rounds,
        }),
    );
    TeamResult { mode: mode.to_string(), task_id: task_id.to_string(), selector, agents, candidates, selected, outcome, hub_writes, hub_reads, total_rounds }
}

pub(crate) fn announce(log: &EventLog, state: &AgentState, role: &str) {
    log.emit(
        state.agent_id().as_str(),
        EventKind::Status,
        json!({
            "status": "running",
            "role": role,
            "backend": state.config.backend_ref,
            "round_budget": state.config.round_budget,
            "context_window": state.config.context_window,
            "write_trigger": state.config.write_trigger,
        }),
    );
}

/// Runs N peers on one task against a shared hub, then applies the selector
/// to the answered agents' candidates.
pub fn run_team(config: &TeamConfig, env: &RunEnv, log: &EventLog) -> Result<TeamResult, RuntimeError> {
    config.validate()?;
    let backends: Vec<Arc<dyn ChatBackend>> =
        config.agents.iter().map(|a| env.backends.get(&a.backend_ref)).collect::<Result<_, _>>()?;
    let hub = if config.hub_enabled {
        let mut hub = Hub::new(env.backends.get(&config.hub.write_backend)?, env.backends.get(&config.hub.read_backend)?, env.counter.clone());
        if let Some(dir) = &env.hub_dir {
            hub = hub.with_persistence(HubPersistence::new(dir).map_err(|e| RuntimeError::Storage(e.to_string()))?);
        }
        Some(hub)
    } else {
        None
    };

    log.emit(
        "team",
        EventKind::Status,
        json!({
            "event": "start",
            "mode": "team",
            "task_id": config.task.id,
            "question": config.task.question,
            "agents": config.agents.iter().map(|a| a.agent_id.as_str()).collect::<Vec<_>>(),
            "hub_enabled": config.hub_enabled,
            "selector": config.selector.to_string(),
            "schedule": env.schedule,
        }),
    );

    let mut states: Vec<AgentState> = config.agents.iter().map(|a| AgentState::new(a.clone(), &config.task.question)).collect();
    for s in &states {
        announce(log, s, "agent");
    }
    let tools = env.toolbox.clone();
    let toolbox = crate::toolenv::Toolbox { profile: config.task.tool_profile, ..tools };
    let step_env = |i: usize| StepEnv {
        backend: backends[i].as_ref(),
        hub: hub.as_ref(),
        tools: Some(&toolbox),
        extra: None,
        counter: env.counter.as_ref(),
        log,
        role: "agent",
        tags: &[],
    };

    match env.schedule {
        Schedule::RoundRobin => loop {
            let mut progressed = false;
            for (i, st) in states.iter_mut().enumerate() {
                if st.status == AgentStatus::Running {
                    step_agent(st, &step_env(i));
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        },
        Schedule::Concurrent => std::thread::scope(|scope| {
            for (i, st) in states.iter_mut().enumerate() {
                let e = step_env(i);
                scope.spawn(move || {
                    while st.status == AgentStatus::Running {
                        step_agent(st, &e);
                    }
                });
            }
        }),
    }

    let candidates: Vec<CandidateAnswer> = states.iter().filter_map(|s| s.final_answer.clone()).collect();
    let outcomes = states.iter().map(AgentState::outcome).collect();
    Ok(finish(log, "team", &config.task.id, config.selector, outcomes, candidates, None))
}
