//! Executing a config into a run directory, and replaying it.
//!
//! A run directory holds `events.jsonl`, `manifest.json` and (team mode)
//! `hub/`. The manifest embeds the resolved config, so it alone is enough
//! to re-run a scripted configuration.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fugue_core::aggregate::{score_row, ExactMatchJudge, ScoreRow};
use fugue_core::hub::sha256_hex;
use fugue_core::prompts::PROMPT_VERSION;
use fugue_core::runtime::events::{normalized_jsonl, read_jsonl};
use fugue_core::runtime::{run_naive, run_swarm, run_team, Event, EventLog, RuntimeError, Schedule, TeamResult};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Mode, RunConfig};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HUB_DIR: &str = "hub";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0} already holds a run")]
    Occupied(String),
    #[error("{path}: {message}")]
    Manifest { path: String, message: String },
    #[error("cannot replay: {0}")]
    NotReplayable(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub code_version: String,
    pub prompt_version: String,
    pub mode: Mode,
    pub task_id: String,
    pub seed: u64,
    pub backends: Vec<BackendInfo>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    /// Resolved config: every referenced file inlined.
    pub config: RunConfig,
    pub result: TeamResult,
    /// Rule scores against the gold answer, when the task has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreRow>,
    pub event_count: usize,
    /// SHA-256 of the normalized event log.
    pub events_sha256: String,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, RunError> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Manifest { path: path.display().to_string(), message: e.to_string() })
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Applies a seed: recorded in the config and forwarded as the sampling seed
/// of every team agent that has none.
pub fn apply_seed(config: &mut RunConfig, seed: u64) {
    config.seed = seed;
    if let Some(team) = &mut config.team {
        for a in &mut team.agents {
            a.sampling.seed.get_or_insert(seed);
        }
    }
}

/// Runs `config` against `log`, persisting the hub under `hub_dir` if given.
pub fn execute(config: &RunConfig, log: &EventLog, hub_dir: Option<PathBuf>) -> Result<TeamResult, RunError> {
    config.validate().map_err(ConfigError::Invalid)?;
    let mut env = config.build_env()?;
    env.hub_dir = hub_dir;
    let result = match config.mode {
        Mode::Team => run_team(&config.team_config().expect("validated"), &env, log)?,
        Mode::Naive => run_naive(&config.naive_config().expect("validated"), &env, log)?,
        Mode::Swarm => run_swarm(&config.swarm_config().expect("validated"), &env, log)?,
    };
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn any_failed(&self) -> bool {
        self.manifest.result.any_failed()
    }
}

/// Executes a resolved config into `run_dir`, writing the log, hub and manifest.
pub fn run_to_dir(config: &RunConfig, run_dir: &Path) -> Result<RunSummary, RunError> {
    if run_dir.join(MANIFEST_FILE).exists() || run_dir.join(EVENTS_FILE).exists() {
        return Err(RunError::Occupied(run_dir.display().to_string()));
    }
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let events_path = run_dir.join(EVENTS_FILE);
    let log = EventLog::with_file(&events_path).map_err(io_err(&events_path))?;
    let started = now_ms();
    let hub_dir = (config.mode == Mode::Team).then(|| run_dir.join(HUB_DIR));
    let result = execute(config, &log, hub_dir)?;
    if let Some(e) = log.sink_error() {
        return Err(RunError::Io { path: events_path.display().to_string(), message: e });
    }
    let events = log.events();
    let scores = config.task.gold_answer.as_deref().and_then(|g| score_row(&result.candidates, g, &ExactMatchJudge).ok());
    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        code_version: format!("fugue {}", env!("CARGO_PKG_VERSION")),
        prompt_version: PROMPT_VERSION.to_string(),
        mode: config.mode,
        task_id: config.task.id.clone(),
        seed: config.seed,
        backends: config
            .backends
            .iter()
            .map(|(name, b)| BackendInfo { name: name.clone(), kind: b.kind().to_string(), model: b.model().map(str::to_string) })
            .collect(),
        started_at_ms: started,
        finished_at_ms: now_ms(),
        config: config.clone(),
        result,
        scores,
        event_count: events.len(),
        events_sha256: sha256_hex(&normalized_jsonl(&events)),
    };
    let path = run_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(RunSummary { run_dir: run_dir.to_path_buf(), manifest })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub events: usize,
    pub identical: bool,
    /// 1-based line of the first difference.
    pub first_difference: Option<usize>,
    pub expected_line: Option<String>,
    pub actual_line: Option<String>,
}

/// Re-executes a config in memory and compares its normalized log with `stored`.
pub fn replay_against(config: &RunConfig, stored: &[Event]) -> Result<(ReplayReport, Vec<Event>), RunError> {
    if !config.is_scripted() {
        return Err(RunError::NotReplayable("the run used live backends or a live search endpoint".into()));
    }
    if config.schedule == Schedule::Concurrent {
        return Err(RunError::NotReplayable("concurrent schedules do not fix the event order".into()));
    }
    let log = EventLog::new();
    execute(config, &log, None)?;
    let fresh = log.events();
    let (want, got) = (normalized_jsonl(stored), normalized_jsonl(&fresh));
    let diff = want.lines().zip(got.lines()).position(|(a, b)| a != b).or_else(|| {
        let (a, b) = (want.lines().count(), got.lines().count());
        (a != b).then_some(a.min(b))
    });
    let report = ReplayReport {
        events: fresh.len(),
        identical: want == got,
        first_difference: diff.map(|i| i + 1),
        expected_line: diff.and_then(|i| want.lines().nth(i).map(str::to_string)),
        actual_line: diff.and_then(|i| got.lines().nth(i).map(str::to_string)),
    };
    Ok((report, fresh))
}

/// Replays a run directory from its manifest alone and checks its log.
pub fn replay_dir(run_dir: &Path) -> Result<ReplayReport, RunError> {
    let manifest = RunManifest::load(run_dir)?;
    let path = run_dir.join(EVENTS_FILE);
    let stored = read_jsonl(&path).map_err(io_err(&path))?;
    Ok(replay_against(&manifest.config, &stored)?.0)
}
