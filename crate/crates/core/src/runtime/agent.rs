use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::answer::parse_final_answer;
use crate::backends::{ChatBackend, ChatMessage, ChatRequest, ToolSchema};
use crate::hub::{evict_and_replace, sha256_hex, Hub, HubError, ReadRequest, Readout};
use crate::tokens::{truncate_to_tokens, TokenCounter};
use crate::toolenv::{memory_tool_schema, ToolError, Toolbox, MAX_MEMORY_PAGES};
use crate::types::{ActionRecord, AgentId, CandidateAnswer, Episode, EpisodeRef, TrajectoryStep, WorkingContext};

use super::events::{EventKind, EventLog};
use super::{backend_error_text, check_write_trigger, AgentState, AgentStatus, ToolHandler};

pub const NUDGE_OBSERVATION: &str = "No tool call and no final answer found. Call a tool, or finish with an \"Exact Answer:\" line and a \"Confidence:\" line.";

const TRUNCATION_MARK: &str = "\n[observation truncated]";
const PREVIEW_CHARS: usize = 400;

/// What one agent turn can reach.
#[derive(Clone, Copy)]
pub struct StepEnv<'a> {
    pub backend: &'a dyn ChatBackend,
    /// `None` runs the agent in isolation (no hub, no memory tool).
    pub hub: Option<&'a Hub>,
    pub tools: Option<&'a Toolbox>,
    pub extra: Option<&'a dyn ToolHandler>,
    pub counter: &'a dyn TokenCounter,
    pub log: &'a EventLog,
    /// Value of the `role` request tag and of the `role` field on answer events.
    pub role: &'a str,
    pub tags: &'a [(&'a str, &'a str)],
}

impl<'a> StepEnv<'a> {
    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        let mut out = self.tools.map(Toolbox::schemas).unwrap_or_default();
        if self.hub.is_some() {
            out.push(memory_tool_schema());
        }
        if let Some(extra) = self.extra {
            out.extend(extra.schemas());
        }
        out
    }
}

fn preview(text: &str) -> String {
    text.chars().take(PREVIEW_CHARS).collect()
}

fn page_label(hub: Option<&Hub>, r: &EpisodeRef) -> String {
    match hub.and_then(|h| h.page_number(r)) {
        Some(n) => format!("Page {n}"),
        None => "Page ?".to_string(),
    }
}

/// The Exploration Memory block: teammate pages, own pages, then readouts.
fn memory_block(context: &WorkingContext, hub: Option<&Hub>) -> String {
    if context.teammate_notes.is_empty() && context.own_notes.is_empty() && context.readouts.is_empty() {
        return "Exploration Memory is empty. Begin working on the question.".to_string();
    }
    let mut out = String::from("Exploration Memory");
    if !context.teammate_notes.is_empty() {
        out.push_str("\n\nTeammate pages:");
        for n in &context.teammate_notes {
            let r = &n.episode_ref;
            out.push_str(&format!("\n{} (agent {}, episode {}): {}", page_label(hub, r), r.owner, r.ordinal, n.summary));
        }
    }
    if !context.own_notes.is_empty() {
        out.push_str("\n\nYour pages:");
        for n in &context.own_notes {
            let r = &n.episode_ref;
            out.push_str(&format!("\n{} (your episode {}): {}", page_label(hub, r), r.ordinal, n.summary));
        }
    }
    if !context.readouts.is_empty() {
        out.push_str("\n\nMemory readouts:");
        for r in &context.readouts {
            out.push('\n');
            out.push_str(r);
        }
    }
    out
}

/// Messages for the next model call and their token count.
///
/// Layout: system preamble, then the memory block, then one
/// assistant/observation pair per active step.
pub fn assemble_prompt(context: &WorkingContext, hub: Option<&Hub>, counter: &dyn TokenCounter) -> (Vec<ChatMessage>, usize) {
    let mut messages = vec![ChatMessage::system(context.system_preamble.clone()), ChatMessage::user(memory_block(context, hub))];
    for step in &context.active {
        messages.push(ChatMessage::assistant(step.action.render()));
        messages.push(ChatMessage::user(format!("Observation:\n{}", step.observation)));
    }
    let tokens = messages.iter().map(|m| counter.count(&m.content)).sum();
    (messages, tokens)
}

fn prompt_tokens(state: &AgentState, hub: Option<&Hub>, counter: &dyn TokenCounter) -> usize {
    assemble_prompt(&state.context, hub, counter).1
}

/// Refreshes teammate notes from the hub and sheds readouts, then teammate
/// notes, until resident memory sits below the trigger and the prompt fits.
/// Without a hub, the oldest active steps are dropped instead.
fn fit_context(state: &mut AgentState, hub: Option<&Hub>, counter: &dyn TokenCounter) -> usize {
    if let Some(h) = hub {
        state.context.teammate_notes = h
            .visible_notes(state.agent_id())
            .into_iter()
            .filter(|n| !state.dropped_notes.contains(&n.episode_ref))
            .collect();
    }
    let window = state.config.context_window;
    let trigger = state.config.write_trigger;
    let mut dropped = 0;
    loop {
        let over_trigger = state.context.resident_tokens(counter) >= trigger;
        let over_window = prompt_tokens(state, hub, counter) > window;
        if !over_trigger && !over_window {
            break;
        }
        if !state.context.readouts.is_empty() {
            state.context.readouts.remove(0);
        } else if !state.context.teammate_notes.is_empty() {
            let note = state.context.teammate_notes.remove(0);
            state.dropped_notes.insert(note.episode_ref);
        } else if over_window && hub.is_none() && !state.context.active.is_empty() {
            state.context.active.remove(0);
        } else {
            break;
        }
        dropped += 1;
    }
    dropped
}

/// Shortens the newest observation until the next prompt fits the window.
fn fit_last_observation(state: &mut AgentState, hub: Option<&Hub>, counter: &dyn TokenCounter) -> bool {
    let window = state.config.context_window;
    let mut truncated = false;
    loop {
        let total = prompt_tokens(state, hub, counter);
        if total <= window {
            return truncated;
        }
        let Some(step) = state.context.active.pop() else { return truncated };
        let excess = total - window;
        let keep = counter.count(&step.observation).saturating_sub(excess + counter.count(TRUNCATION_MARK) + 1);
        let head = truncate_to_tokens(counter, &step.observation, keep);
        let observation = if head.is_empty() { String::new() } else { format!("{head}{TRUNCATION_MARK}") };
        let done = step.observation.is_empty();
        state.context.active.push(TrajectoryStep::new(step.index, step.action, observation, counter));
        truncated = true;
        if done {
            return truncated;
        }
    }
}

fn string_arg<'v>(args: &'v Value, key: &str) -> Option<&'v str> {
    args.get(key).and_then(Value::as_str)
}

/// Resolves page numbers, validates the request, and reads through the hub.
pub fn memory_tool(hub: &Hub, requester: &AgentId, args: &Value) -> Result<(Vec<u64>, ReadRequest, Readout), ToolError> {
    let pages: Vec<u64> = match args.get("pages") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_u64().ok_or_else(|| ToolError::Arguments(format!("page `{v}` is not a page number"))))
            .collect::<Result<_, _>>()?,
        Some(Value::Number(n)) => vec![n.as_u64().ok_or_else(|| ToolError::Arguments(format!("page `{n}` is not a page number")))?],
        _ => return Err(ToolError::Arguments("`pages` must be an array of page numbers".into())),
    };
    if pages.is_empty() {
        return Err(ToolError::Arguments("`pages` must name at least one page".into()));
    }
    if pages.len() > MAX_MEMORY_PAGES {
        return Err(ToolError::Arguments(format!("`pages` names {} pages; at most {MAX_MEMORY_PAGES} are allowed", pages.len())));
    }
    let goal = string_arg(args, "goal").map(str::trim).unwrap_or_default();
    if goal.is_empty() {
        return Err(ToolError::Arguments("`goal` must be a nonempty string".into()));
    }
    let mut refs = BTreeSet::new();
    for &p in &pages {
        match hub.resolve_page(p as usize) {
            Some(r) => {
                refs.insert(r);
            }
            None => return Err(ToolError::Arguments(format!("unknown page {p}"))),
        }
    }
    let request = ReadRequest { requester: requester.clone(), intent: goal.to_string(), refs, prior_summary: None };
    match hub.read(&request) {
        Ok(readout) => Ok((pages, request, readout)),
        Err(HubError::ReadModel(e)) => Err(ToolError::Provider(format!("memory read failed: {e}"))),
        Err(e) => Err(ToolError::Arguments(e.to_string())),
    }
}

enum Dispatch {
    Observation { observation: String, invoked: bool },
    Answer { answer: String, confidence: f64 },
}

fn emit_status(env: &StepEnv, state: &AgentState) {
    let mut payload = json!({
        "status": state.status.to_string(),
        "rounds_used": state.rounds_used,
        "round_budget": state.config.round_budget,
        "tool_calls": state.tool_calls,
        "episodes_written": state.episodes_written,
    });
    if let Some(e) = &state.error {
        payload["error"] = json!(e);
    }
    env.log.emit(state.agent_id().as_str(), EventKind::Status, payload);
}

fn run_tool(env: &StepEnv, state: &mut AgentState, turn: u32, name: &str, args: &Value) -> Dispatch {
    let agent = state.agent_id().clone();
    if name == "memory" {
        let Some(hub) = env.hub else {
            let e = ToolError::Unavailable("memory".into());
            return Dispatch::Observation { observation: e.observation(), invoked: false };
        };
        return match memory_tool(hub, &agent, args) {
            Ok((pages, request, readout)) => {
                let entry = format!("Readout for pages {:?} (goal: {}):\n{}", pages, request.intent, readout.text);
                state.context.readouts.push(entry);
                let refs: Vec<String> = request.refs.iter().map(ToString::to_string).collect();
                env.log.emit(
                    agent.as_str(),
                    EventKind::HubRead,
                    json!({
                        "turn": turn,
                        "pages": pages,
                        "refs": refs,
                        "goal": request.intent,
                        "readout": readout.text,
                        "page_reads": readout.pages.iter().map(|p| json!({
                            "ref": p.episode_ref.to_string(),
                            "content_sha256": p.content_sha256,
                            "previous_summary": p.previous_summary,
                            "output": p.output,
                        })).collect::<Vec<_>>(),
                    }),
                );
                Dispatch::Observation {
                    observation: format!("Memory readout for pages {pages:?} added to Exploration Memory."),
                    invoked: true,
                }
            }
            Err(e) => Dispatch::Observation { invoked: e.invoked(), observation: e.observation() },
        };
    }
    if let Some(extra) = env.extra.filter(|x| x.handles(name)) {
        return match extra.invoke(name, args) {
            Ok(obs) => Dispatch::Observation { observation: obs, invoked: true },
            Err(e) => Dispatch::Observation { invoked: e.invoked(), observation: e.observation() },
        };
    }
    let result = match env.tools {
        Some(tb) => tb.invoke(name, args),
        None => Err(ToolError::Unavailable(name.to_string())),
    };
    match result {
        Ok(obs) => Dispatch::Observation { observation: obs, invoked: true },
        Err(e) => Dispatch::Observation { invoked: e.invoked(), observation: e.observation() },
    }
}

/// Writes the active segment to the hub and evicts it. Returns false (and
/// fails the agent) if the hub rejects the write.
fn write_and_evict(env: &StepEnv, state: &mut AgentState, hub: &Hub, turn: u32, trigger: &str) -> bool {
    let ordinal = state.episodes_written + 1;
    let episode = match Episode::new(state.agent_id().clone(), ordinal, state.context.active.clone()) {
        Ok(e) => e,
        Err(e) => return fail(env, state, format!("episode construction failed: {e}")),
    };
    let rendered = episode.render();
    let episode_tokens = episode.token_total;
    let steps = episode.steps.len();
    let outcome = match hub.write_episode(episode.clone(), trigger == "terminal") {
        Ok(o) => o,
        Err(e) => return fail(env, state, format!("hub write failed: {e}")),
    };
    let note = outcome.note.clone();
    match evict_and_replace(&state.context, &episode, outcome.note) {
        Ok(ctx) => state.context = ctx,
        Err(e) => return fail(env, state, format!("eviction failed: {e}")),
    }
    state.episodes_written = ordinal;
    let mut payload = json!({
        "turn": turn,
        "trigger": trigger,
        "ordinal": ordinal,
        "page": hub.page_number(&note.episode_ref),
        "steps": steps,
        "episode_tokens": episode_tokens,
        "episode_sha256": sha256_hex(&rendered),
        "note": note.summary,
        "note_tokens": env.counter.count(&note.summary),
        "degraded": note.degraded,
        "created_at": note.created_at,
        "context_tokens_after": state.context.token_size(env.counter),
    });
    if let Some(e) = &outcome.model_error {
        payload["model_error"] = json!(e.to_string());
    }
    env.log.emit(state.agent_id().as_str(), EventKind::HubWrite, payload);
    true
}

fn fail(env: &StepEnv, state: &mut AgentState, error: String) -> bool {
    state.status = AgentStatus::Failed;
    state.error = Some(error);
    emit_status(env, state);
    false
}

/// One model turn: fit context, call the model, dispatch its action, append
/// the step, then apply the write trigger.
pub fn step_agent(state: &mut AgentState, env: &StepEnv) {
    if state.status != AgentStatus::Running || state.rounds_used >= state.config.round_budget {
        return;
    }
    let agent = state.agent_id().clone();
    let turn = state.rounds_used + 1;
    let shed = fit_context(state, env.hub, env.counter);
    let (messages, prompt_tokens) = assemble_prompt(&state.context, env.hub, env.counter);
    if prompt_tokens > state.config.context_window {
        fail(env, state, format!("prompt of {prompt_tokens} tokens cannot fit the {} token window", state.config.context_window));
        return;
    }
    let teammate_notes = state.context.teammate_notes.len();
    let own_notes = state.context.own_notes.len();
    let readouts = state.context.readouts.len();

    let mut request = ChatRequest::new("", messages)
        .with_tools(env.tool_schemas())
        .with_sampling(state.config.sampling.clone())
        .with_tag("agent", &agent)
        .with_tag("turn", turn)
        .with_tag("role", env.role);
    for (k, v) in env.tags {
        request = request.with_tag(k, v);
    }

    let response = match env.backend.chat(&request) {
        Ok(r) => r,
        Err(e) => {
            fail(env, state, format!("backend failure: {}", backend_error_text(&e)));
            return;
        }
    };
    state.last_content = response.content.clone();

    let (action, dispatch) = match response.effective_tool_call() {
        Some(Ok(call)) => {
            let parsed: Result<Value, _> =
                if call.arguments.trim().is_empty() { Ok(json!({})) } else { serde_json::from_str(&call.arguments) };
            match parsed {
                Ok(args) => {
                    env.log.emit(agent.as_str(), EventKind::ToolCall, json!({"turn": turn, "tool": call.name, "arguments": args}));
                    let d = run_tool(env, state, turn, &call.name, &args);
                    (ActionRecord::tool_call(response.content.clone(), call.name.clone(), args), d)
                }
                Err(e) => {
                    env.log.emit(agent.as_str(), EventKind::ToolCall, json!({"turn": turn, "tool": call.name, "arguments": call.arguments}));
                    let err = ToolError::Arguments(format!("arguments are not valid JSON: {e}"));
                    (
                        ActionRecord::tool_call(response.content.clone(), call.name.clone(), Value::String(call.arguments.clone())),
                        Dispatch::Observation { observation: err.observation(), invoked: false },
                    )
                }
            }
        }
        Some(Err(msg)) => (
            ActionRecord::thought(response.content.clone()),
            Dispatch::Observation { observation: format!("Error: malformed tool call: {msg}"), invoked: false },
        ),
        None => match parse_final_answer(&response.content) {
            Ok(p) => (ActionRecord::thought(response.content.clone()), Dispatch::Answer { answer: p.answer, confidence: p.confidence }),
            Err(_) => (
                ActionRecord::thought(response.content.clone()),
                Dispatch::Observation { observation: NUDGE_OBSERVATION.to_string(), invoked: false },
            ),
        },
    };

    let (observation, answer) = match dispatch {
        Dispatch::Observation { observation, invoked } => {
            if invoked {
                state.tool_calls += 1;
            }
            if let Some(tool) = &action.tool {
                env.log.emit(
                    agent.as_str(),
                    EventKind::ToolResult,
                    json!({
                        "turn": turn,
                        "tool": tool,
                        "invoked": invoked,
                        "ok": !observation.starts_with("Error:"),
                        "observation_tokens": env.counter.count(&observation),
                        "observation_sha256": sha256_hex(&observation),
                        "observation_preview": preview(&observation),
                    }),
                );
            }
            (observation, None)
        }
        Dispatch::Answer { answer, confidence } => (String::new(), Some((answer, confidence))),
    };

    let index = state.next_step;
    state.next_step += 1;
    state.context.active.push(TrajectoryStep::new(index, action, observation, env.counter));
    state.rounds_used += 1;
    let truncated = answer.is_none() && fit_last_observation(state, env.hub, env.counter);

    let context_tokens = state.context.token_size(env.counter);
    let mut trigger_fired = false;
    if let Some((text, confidence)) = answer {
        let candidate = CandidateAnswer::new(agent.clone(), text, confidence, state.tool_calls);
        env.log.emit(
            agent.as_str(),
            EventKind::Answer,
            json!({"turn": turn, "role": env.role, "answer": candidate.answer, "confidence": candidate.confidence, "tool_calls": candidate.tool_calls}),
        );
        state.final_answer = Some(candidate);
        state.status = AgentStatus::Answered;
        if let Some(hub) = env.hub {
            if !state.context.active.is_empty() && !write_and_evict(env, state, hub, turn, "terminal") {
                return;
            }
        }
    } else {
        if state.rounds_used >= state.config.round_budget {
            state.status = AgentStatus::Exhausted;
        }
        if let Some(hub) = env.hub {
            if check_write_trigger(&state.context, state.config.write_trigger, env.counter) {
                trigger_fired = true;
                if !write_and_evict(env, state, hub, turn, "budget") {
                    return;
                }
            }
        }
    }

    env.log.emit(
        agent.as_str(),
        EventKind::Turn,
        json!({
            "turn": turn,
            "role": env.role,
            "prompt_tokens": prompt_tokens,
            "context_window": state.config.context_window,
            "context_tokens": context_tokens,
            "write_trigger": state.config.write_trigger,
            "trigger_fired": trigger_fired,
            "teammate_notes": teammate_notes,
            "own_notes": own_notes,
            "readouts": readouts,
            "shed": shed,
            "observation_truncated": truncated,
            "active_steps": state.context.active.len(),
            "tool_calls": state.tool_calls,
        }),
    );
    if state.status != AgentStatus::Running {
        emit_status(env, state);
    }
}

/// Steps the agent until it leaves `running`.
pub fn run_agent(state: &mut AgentState, env: &StepEnv) {
    while state.status == AgentStatus::Running {
        step_agent(state, env);
    }
}

/// What a finished subagent hands back: its final message, or the tail of
/// its trajectory if it never answered.
pub fn partial_report(state: &AgentState, counter: &dyn TokenCounter, max_tokens: usize) -> String {
    if state.status == AgentStatus::Answered {
        return state.last_content.trim().to_string();
    }
    let tail: Vec<String> = state.context.active.iter().rev().take(3).rev().map(TrajectoryStep::render).collect();
    let body = if tail.is_empty() { "(no steps recorded)".to_string() } else { tail.join("\n\n") };
    let head = format!("(no final answer; status {}) Last steps:\n", state.status);
    format!("{head}{}", truncate_to_tokens(counter, &body, max_tokens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Matcher, Script, ScriptedBackend, ScriptedResponse};
    use crate::runtime::AgentConfig;
    use crate::tokens::ByteQuarterCounter;
    use crate::toolenv::{Corpus, Document};
    use crate::types::ToolProfile;
    use std::sync::Arc;

    fn toolbox() -> Toolbox {
        Toolbox::offline(
            ToolProfile::Web,
            Corpus::new([Document { url: "https://x/dafeng".into(), title: "Dafeng".into(), body: "Dafeng was founded in 1853.".into() }]),
        )
    }

    fn env<'a>(backend: &'a dyn ChatBackend, hub: Option<&'a Hub>, tools: &'a Toolbox, log: &'a EventLog) -> StepEnv<'a> {
        StepEnv { backend, hub, tools: Some(tools), extra: None, counter: &ByteQuarterCounter, log, role: "agent", tags: &[] }
    }

    fn hub() -> Hub {
        let w = ScriptedBackend::new("w", Script::new().rule(Matcher::any(), ScriptedResponse::text("NOTE({owner},{ordinal})")));
        let r = ScriptedBackend::new("r", Script::new().rule(Matcher::any(), ScriptedResponse::text("READ({goal})")));
        Hub::new(Arc::new(w), Arc::new(r), Arc::new(ByteQuarterCounter))
    }

    #[test]
    fn final_answer_transitions_to_answered() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 80%")));
        let (tb, log) = (toolbox(), EventLog::new());
        let mut st = AgentState::new(AgentConfig::new("A", "m"), "When?");
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert_eq!(st.status, AgentStatus::Answered);
        let f = st.final_answer.unwrap();
        assert_eq!((f.answer.as_str(), f.confidence, f.tool_calls), ("1853", 0.8, 0));
    }

    #[test]
    fn search_round_trip_counts_a_tool_call() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::tool("search", json!({"queries": ["dafeng"]}))));
        let (tb, log) = (toolbox(), EventLog::new());
        let mut st = AgentState::new(AgentConfig::new("A", "m"), "When?");
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert_eq!((st.tool_calls, st.rounds_used), (1, 1));
        assert!(st.context.active[0].observation.contains("https://x/dafeng"));
    }

    #[test]
    fn last_round_without_answer_exhausts() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::text("thinking")));
        let (tb, log) = (toolbox(), EventLog::new());
        let mut st = AgentState::new(AgentConfig::new("A", "m").with_budget(3), "q");
        st.rounds_used = 2;
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert_eq!(st.status, AgentStatus::Exhausted);
        assert_eq!(st.rounds_used, 3);
        assert_eq!(st.context.active[0].observation, NUDGE_OBSERVATION);
    }

    #[test]
    fn backend_failure_fails_the_agent() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::failure("boom")));
        let (tb, log) = (toolbox(), EventLog::new());
        let mut st = AgentState::new(AgentConfig::new("A", "m"), "q");
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert_eq!(st.status, AgentStatus::Failed);
        assert!(st.error.unwrap().contains("boom"));
    }

    #[test]
    fn malformed_arguments_become_an_observation() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::text("```tool_call\n{not json\n```")));
        let (tb, log) = (toolbox(), EventLog::new());
        let mut st = AgentState::new(AgentConfig::new("A", "m"), "q");
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert_eq!(st.status, AgentStatus::Running);
        assert_eq!(st.tool_calls, 0);
        assert!(st.context.active[0].observation.starts_with("Error: malformed tool call"));
    }

    #[test]
    fn memory_tool_argument_checks() {
        let h = hub();
        let a: AgentId = "A".into();
        let six = json!({"pages": [1, 2, 3, 4, 5, 6], "goal": "g"});
        assert!(matches!(memory_tool(&h, &a, &six), Err(ToolError::Arguments(m)) if m.contains("at most 5")));
        assert!(matches!(memory_tool(&h, &a, &json!({"pages": [], "goal": "g"})), Err(ToolError::Arguments(_))));
        assert!(matches!(memory_tool(&h, &a, &json!({"pages": [1], "goal": " "})), Err(ToolError::Arguments(_))));
        let unknown = memory_tool(&h, &a, &json!({"pages": [7], "goal": "g"})).unwrap_err();
        assert_eq!(unknown.observation(), "Error: invalid arguments: unknown page 7");
    }

    #[test]
    fn memory_tool_reads_teammate_page() {
        let h = hub();
        let steps = vec![TrajectoryStep::new(0, ActionRecord::thought("t"), "raw evidence".into(), &ByteQuarterCounter)];
        h.write_episode(Episode::new("B".into(), 1, steps.clone()).unwrap(), false).unwrap();
        h.write_episode(Episode::new("B".into(), 2, vec![TrajectoryStep { index: 1, ..steps[0].clone() }]).unwrap(), false).unwrap();
        let (pages, req, out) = memory_tool(&h, &"A".into(), &json!({"pages": [2], "goal": "find the store"})).unwrap();
        assert_eq!(pages, [2]);
        assert_eq!(req.refs.iter().next().unwrap(), &EpisodeRef::new("B", 2));
        assert_eq!(out.text, "READ(find the store)");
    }

    #[test]
    fn trigger_writes_and_evicts() {
        let h = hub();
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::tool("visit", json!({"url": "https://x/big"}))));
        let tb = Toolbox::offline(
            ToolProfile::Web,
            Corpus::new([Document { url: "https://x/big".into(), title: "Big".into(), body: "x".repeat(4_000) }]),
        );
        let log = EventLog::new();
        let mut cfg = AgentConfig::new("A", "m");
        cfg.context_window = 4_000;
        cfg.write_trigger = 1_500;
        let mut st = AgentState::new(cfg, "q");
        let e = env(&b, Some(&h), &tb, &log);
        step_agent(&mut st, &e);
        assert_eq!(st.episodes_written, 0);
        step_agent(&mut st, &e);
        assert_eq!(st.episodes_written, 1);
        assert!(st.context.active.is_empty());
        assert_eq!(st.context.own_notes[0].summary, "NOTE(A,1)");
        let writes: Vec<_> = log.events().into_iter().filter(|e| e.kind == EventKind::HubWrite).collect();
        assert_eq!(writes.len(), 1);
        assert_eq!(writes[0].str_field("trigger"), Some("budget"));
    }

    #[test]
    fn oversized_observation_is_truncated_to_fit() {
        let b = ScriptedBackend::new("m", Script::new().rule(Matcher::any(), ScriptedResponse::tool("visit", json!({"url": "https://x/big"}))));
        let tb = Toolbox::offline(
            ToolProfile::Web,
            Corpus::new([Document { url: "https://x/big".into(), title: "Big".into(), body: "y".repeat(40_000) }]),
        );
        let log = EventLog::new();
        let mut cfg = AgentConfig::new("A", "m");
        cfg.context_window = 2_000;
        cfg.write_trigger = 2_000;
        let mut st = AgentState::new(cfg, "q");
        step_agent(&mut st, &env(&b, None, &tb, &log));
        assert!(prompt_tokens(&st, None, &ByteQuarterCounter) <= 2_000);
        assert!(st.context.active[0].observation.ends_with(TRUNCATION_MARK));
    }
}
