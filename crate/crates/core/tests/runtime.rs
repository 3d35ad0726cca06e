use std::sync::Arc;

use fugue_core::backends::{ChatBackend, Matcher, Role, Script, ScriptedBackend, ScriptedResponse};
use fugue_core::runtime::events::normalized_jsonl;
use fugue_core::runtime::{
    run_naive, run_swarm, run_team, AgentConfig, AgentStatus, Backends, EventKind, EventLog, NaiveConfig, RunEnv, SwarmConfig, TeamConfig,
    TeamOutcome,
};
use fugue_core::toolenv::{Corpus, Document, Toolbox};
use fugue_core::types::{Task, ToolProfile};
use serde_json::json;

fn task() -> Task {
    Task { id: "t".into(), question: "When was the store founded?".into(), gold_answer: Some("1853".into()), tool_profile: ToolProfile::Web }
}

fn corpus() -> Corpus {
    Corpus::new([
        Document { url: "https://a/store".into(), title: "Store".into(), body: "The store was founded in 1853 near the gate.".into() },
        Document { url: "https://a/big".into(), title: "Big".into(), body: "filler ".repeat(2_000) },
    ])
}

fn env(backends: Backends) -> RunEnv {
    RunEnv::new(backends, Toolbox::offline(ToolProfile::Web, corpus()))
}

fn hub_backend() -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(
        "hub",
        Script::new()
            .rule(Matcher::any().tag("hub", "write"), ScriptedResponse::text("NOTE({owner},{ordinal})"))
            .rule(Matcher::any().tag("hub", "read"), ScriptedResponse::text("READ({owner},{ordinal})")),
    ))
}

fn answer(agent: &str, turn: u32, text: &str) -> (Matcher, ScriptedResponse) {
    (Matcher::any().tag("agent", agent).tag("turn", turn), ScriptedResponse::text(text))
}

fn script(rules: Vec<(Matcher, ScriptedResponse)>) -> Script {
    rules.into_iter().fold(Script::new(), |s, (m, r)| s.rule(m, r))
}

fn agent(id: &str, window: usize, trigger: usize) -> AgentConfig {
    let mut a = AgentConfig::new(id, "m").with_budget(10);
    a.context_window = window;
    a.write_trigger = trigger;
    a
}

#[test]
fn bon_team_selects_the_confident_agent() {
    let m = Arc::new(ScriptedBackend::new(
        "m",
        script(vec![answer("A", 1, "Exact Answer: X\nConfidence: 90%"), answer("B", 1, "Exact Answer: Y\nConfidence: 40%")]),
    ));
    let backends = Backends::new().with("m", m).with("hub", hub_backend());
    let cfg = TeamConfig::new(task(), vec![agent("A", 8192, 4096), agent("B", 8192, 4096)]);
    let log = EventLog::new();
    let r = run_team(&cfg, &env(backends), &log).unwrap();
    assert_eq!(r.outcome, TeamOutcome::Selected);
    assert_eq!(r.selected.unwrap().answer, "X");
    assert_eq!(r.candidates.len(), 2);
}

#[test]
fn no_answers_is_an_empty_team() {
    let m = Arc::new(ScriptedBackend::new("m", script(vec![(Matcher::any(), ScriptedResponse::text("thinking"))])));
    let backends = Backends::new().with("m", m).with("hub", hub_backend());
    let mut cfg = TeamConfig::new(task(), vec![agent("A", 8192, 4096).with_budget(2)]);
    cfg.hub_enabled = false;
    let r = run_team(&cfg, &env(backends), &EventLog::new()).unwrap();
    assert_eq!(r.outcome, TeamOutcome::EmptyTeam);
    assert!(r.selected.is_none());
    assert_eq!(r.agents[0].status, AgentStatus::Exhausted);
    assert_eq!(r.agents[0].rounds_used, 2);
}

#[test]
fn hub_disabled_team_logs_no_hub_events() {
    let m = Arc::new(ScriptedBackend::new(
        "m",
        script(vec![
            (Matcher::any().tag("turn", 1), ScriptedResponse::tool("visit", json!({"url": "https://a/big"}))),
            (Matcher::any().tag("turn", 2), ScriptedResponse::tool("visit", json!({"url": "https://a/big"}))),
            (Matcher::any(), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 50%")),
        ]),
    ));
    let hub = hub_backend();
    let backends = Backends::new().with("m", m).with("hub", hub.clone());
    let mut cfg = TeamConfig::new(task(), vec![agent("A", 4096, 600), agent("B", 4096, 600)]);
    cfg.hub_enabled = false;
    let log = EventLog::new();
    let r = run_team(&cfg, &env(backends), &log).unwrap();
    assert_eq!((r.hub_writes, r.hub_reads), (0, 0));
    assert!(log.events().iter().all(|e| !matches!(e.kind, EventKind::HubWrite | EventKind::HubRead)));
    assert_eq!(hub.calls(), 0);
}

#[test]
fn single_agent_team_never_sees_teammate_pages() {
    let m = Arc::new(ScriptedBackend::new(
        "m",
        script(vec![
            (Matcher::any().tag("turn", 1), ScriptedResponse::tool("visit", json!({"url": "https://a/big"}))),
            (Matcher::any().tag("turn", 2), ScriptedResponse::tool("memory", json!({"pages": [1], "goal": "recall the filler"}))),
            (Matcher::any().tag("turn", 3), ScriptedResponse::tool("visit", json!({"url": "https://a/big"}))),
            (Matcher::any(), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 50%")),
        ]),
    ));
    let backends = Backends::new().with("m", m.clone()).with("hub", hub_backend());
    let cfg = TeamConfig::new(task(), vec![agent("A", 8192, 2000)]);
    let log = EventLog::new();
    let r = run_team(&cfg, &env(backends), &log).unwrap();
    assert!(r.hub_writes >= 2);
    assert_eq!(r.hub_reads, 1);
    for t in m.trace() {
        assert!(t.request.messages.iter().all(|msg| !msg.content.contains("Teammate pages")));
    }
    for e in log.events().iter().filter(|e| e.kind == EventKind::Turn) {
        assert_eq!(e.u64_field("teammate_notes"), Some(0));
    }
}

#[test]
fn prompts_stay_inside_the_window() {
    let m = Arc::new(ScriptedBackend::new(
        "m",
        script(vec![
            (Matcher::any().tag("turn", 5), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 50%")),
            (Matcher::any(), ScriptedResponse::tool("visit", json!({"url": "https://a/big"}))),
        ]),
    ));
    let backends = Backends::new().with("m", m).with("hub", hub_backend());
    for hub_enabled in [true, false] {
        let mut cfg = TeamConfig::new(task(), vec![agent("A", 3000, 2500), agent("B", 3000, 2500), agent("C", 3000, 2500)]);
        cfg.hub_enabled = hub_enabled;
        let log = EventLog::new();
        let r = run_team(&cfg, &env(backends.clone()), &log).unwrap();
        assert!(!r.any_failed());
        for e in log.events().iter().filter(|e| e.kind == EventKind::Turn) {
            assert!(e.u64_field("prompt_tokens").unwrap() <= 3000, "{}", e.to_line());
            assert!(e.u64_field("context_tokens").unwrap() <= 3000, "{}", e.to_line());
        }
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let run = || {
        let m = Arc::new(ScriptedBackend::new(
            "m",
            script(vec![
                (Matcher::any().tag("turn", 1), ScriptedResponse::tool("search", json!({"queries": ["store founded"]}))),
                (Matcher::any().tag("agent", "B").tag("turn", 2), ScriptedResponse::tool("memory", json!({"pages": [1], "goal": "year"}))),
                (Matcher::any(), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 70%")),
            ]),
        ));
        let backends = Backends::new().with("m", m).with("hub", hub_backend());
        let cfg = TeamConfig::new(task(), vec![agent("A", 4096, 50), agent("B", 4096, 50)]);
        let log = EventLog::new();
        run_team(&cfg, &env(backends), &log).unwrap();
        normalized_jsonl(&log.events())
    };
    let first = run();
    assert!(first.contains("\"hub_read\""));
    assert_eq!(first, run());
}

fn naive_backends(sub_rule: ScriptedResponse) -> (Backends, Arc<ScriptedBackend>) {
    let meta = Arc::new(ScriptedBackend::new(
        "meta",
        Script::new()
            .rule(Matcher::any().tag("phase", "plan"), ScriptedResponse::text(r#"["find the store", "find the year"]"#))
            .rule(Matcher::any(), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 80%")),
    ));
    let subs = Arc::new(ScriptedBackend::new("subs", Script::new().rule(Matcher::any(), sub_rule)));
    (Backends::new().with("meta", meta.clone()).with("subs", subs), meta)
}

#[test]
fn naive_runs_plan_search_aggregate() {
    let (backends, _) = naive_backends(ScriptedResponse::text("Exact Answer: 1853\nConfidence: 60%"));
    let log = EventLog::new();
    let r = run_naive(&NaiveConfig::new(task(), "meta", "subs"), &env(backends), &log).unwrap();
    assert_eq!(r.selected.unwrap().answer, "1853");
    let ids: Vec<&str> = r.agents.iter().map(|a| a.agent_id.as_str()).collect();
    assert_eq!(ids, ["meta", "sub-1", "sub-2"]);
    let events = log.events();
    let phase = |p: &str| events.iter().filter(|e| e.kind == EventKind::Turn && e.str_field("phase") == Some(p)).count();
    assert_eq!(phase("plan"), 1);
    let answers: Vec<&str> = events.iter().filter(|e| e.kind == EventKind::Answer).map(|e| e.agent_id.as_str()).collect();
    assert_eq!(answers, ["sub-1", "sub-2", "meta"]);
    assert_eq!(r.agents[0].round_budget, 50);
    assert_eq!(r.agents[1].round_budget, 100);
}

#[test]
fn exhausted_subagents_still_report() {
    let (backends, meta) = naive_backends(ScriptedResponse::tool("search", json!({"queries": ["store"]})));
    let mut cfg = NaiveConfig::new(task(), "meta", "subs");
    cfg.sub_rounds = 3;
    let r = run_naive(&cfg, &env(backends), &EventLog::new()).unwrap();
    assert!(r.agents[1..].iter().all(|a| a.status == AgentStatus::Exhausted && a.rounds_used == 3));
    assert_eq!(r.selected.unwrap().answer, "1853");
    let synth = meta.trace().pop().unwrap();
    let prompt: String = synth.request.messages.iter().map(|m| m.content.as_str()).collect();
    assert!(prompt.contains("Subtask 1 (exhausted)") && prompt.contains("Subtask 2 (exhausted)"), "{prompt}");
    assert_eq!(r.agents[0].rounds_used, 2);
}

#[test]
fn naive_plan_failure_fails_the_run() {
    let meta = Arc::new(ScriptedBackend::new("meta", Script::new().rule(Matcher::any(), ScriptedResponse::text("no plan"))));
    let subs = Arc::new(ScriptedBackend::new("subs", Script::new().rule(Matcher::any(), ScriptedResponse::text("x"))));
    let backends = Backends::new().with("meta", meta).with("subs", subs.clone());
    let log = EventLog::new();
    let r = run_naive(&NaiveConfig::new(task(), "meta", "subs"), &env(backends), &log).unwrap();
    assert!(matches!(r.outcome, TeamOutcome::Failed { .. }));
    assert_eq!(subs.calls(), 0);
    let failed = log.events().into_iter().find(|e| e.kind == EventKind::Status && e.str_field("status") == Some("failed")).unwrap();
    assert_eq!(failed.str_field("transcript"), Some("no plan"));
}

#[test]
fn single_subtask_keeps_three_phases() {
    let (backends, _) = naive_backends(ScriptedResponse::text("Exact Answer: 1853\nConfidence: 60%"));
    let mut cfg = NaiveConfig::new(task(), "meta", "subs");
    cfg.k = 1;
    let log = EventLog::new();
    let r = run_naive(&cfg, &env(backends), &log).unwrap();
    assert_eq!(r.agents.len(), 2);
    let answers: Vec<String> = log.events().into_iter().filter(|e| e.kind == EventKind::Answer).map(|e| e.agent_id).collect();
    assert_eq!(answers, ["sub-1", "meta"]);
}

fn swarm_meta(rules: Vec<(Matcher, ScriptedResponse)>) -> Arc<ScriptedBackend> {
    let subs = vec![
        (Matcher::any().tag("agent", "researcher").tag("assignment", 1), ScriptedResponse::text("Exact Answer: Dafeng\nConfidence: 60%")),
        (Matcher::any().tag("agent", "researcher").tag("assignment", 2), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 70%")),
    ];
    Arc::new(ScriptedBackend::new("swarm", script(rules.into_iter().chain(subs).collect())))
}

#[test]
fn swarm_reuses_identifiers_across_assignments() {
    let create = json!({"identifier": "researcher", "system_prompt": "You research."});
    let assign = |t: &str| json!({"identifier": "researcher", "task_description": t});
    let b = swarm_meta(vec![
        (Matcher::any().tag("agent", "meta").tag("turn", 1), ScriptedResponse::tool("create_subagent", create)),
        (Matcher::any().tag("agent", "meta").tag("turn", 2), ScriptedResponse::tool("assign_task", assign("which store"))),
        (Matcher::any().tag("agent", "meta").tag("turn", 3), ScriptedResponse::tool("assign_task", assign("which year"))),
        (Matcher::any().tag("agent", "meta").tag("turn", 4), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 80%")),
    ]);
    let log = EventLog::new();
    let r = run_swarm(&SwarmConfig::new(task(), "swarm"), &env(Backends::new().with("swarm", b.clone())), &log).unwrap();
    assert_eq!(r.selected.unwrap().answer, "1853");
    assert_eq!(r.agents.len(), 2);
    let sub = &r.agents[1];
    assert_eq!((sub.agent_id.as_str(), sub.rounds_used), ("researcher", 2));
    assert_eq!(sub.final_answer.as_ref().unwrap().answer, "1853");
    let events = log.events();
    let created = events.iter().filter(|e| e.str_field("status") == Some("created")).count();
    let assigned = events.iter().filter(|e| e.str_field("status") == Some("assigned")).count();
    assert_eq!((created, assigned), (1, 2));
    // reports reach only the meta-agent
    let meta_turn4 = b.trace().into_iter().find(|t| t.request.tags.get("agent").map(String::as_str) == Some("meta") && t.request.tags["turn"] == "4").unwrap();
    let tool_obs: Vec<_> = meta_turn4.request.messages.iter().filter(|m| m.role == Role::User && m.content.contains("Report from `researcher`")).collect();
    assert_eq!(tool_obs.len(), 2);
    for t in b.trace().iter().filter(|t| t.request.tags.get("agent").map(String::as_str) == Some("researcher")) {
        assert!(t.request.messages.iter().all(|m| !m.content.contains("Report from")));
    }
    assert!(events.iter().all(|e| !matches!(e.kind, EventKind::HubRead | EventKind::HubWrite)));
}

#[test]
fn swarm_assign_before_create_is_an_observation() {
    let b = swarm_meta(vec![
        (
            Matcher::any().tag("agent", "meta").tag("turn", 1),
            ScriptedResponse::tool("assign_task", json!({"identifier": "researcher", "task_description": "x"})),
        ),
        (Matcher::any().tag("agent", "meta").tag("turn", 2), ScriptedResponse::text("Exact Answer: 1853\nConfidence: 30%")),
    ]);
    let log = EventLog::new();
    let r = run_swarm(&SwarmConfig::new(task(), "swarm"), &env(Backends::new().with("swarm", b)), &log).unwrap();
    assert_eq!(r.agents.len(), 1);
    assert_eq!(r.agents[0].status, AgentStatus::Answered);
    let result = log.events().into_iter().find(|e| e.kind == EventKind::ToolResult).unwrap();
    assert_eq!(result.payload["ok"], json!(false));
    assert!(result.str_field("observation_preview").unwrap().contains("unknown subagent `researcher`"));
}

#[test]
fn backend_names_are_checked_before_running() {
    let cfg = TeamConfig::new(task(), vec![agent("A", 4096, 100)]);
    let b: Arc<dyn ChatBackend> = hub_backend();
    assert!(run_team(&cfg, &env(Backends::new().with("hub", b)), &EventLog::new()).is_err());
}
