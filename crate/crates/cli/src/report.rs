//! Per-rule score tables over run directories, grouped by write trigger
//! when the runs form a context-budget sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fugue_core::aggregate::{score_row, ExactMatchJudge, Judge, ScoreRow};
use fugue_core::runtime::events::read_jsonl;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::run::{RunError, RunManifest, EVENTS_FILE};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run directories given")]
    NoRuns,
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("runs cover different task sets across budgets: {0}")]
    MixedTasks(String),
}

/// Scores of one run against its gold answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub run_dir: PathBuf,
    pub task_id: String,
    pub mode: String,
    pub write_trigger: Option<usize>,
    pub scores: Option<ScoreRow>,
    /// Whether the selector's logged choice matches the gold answer.
    pub selected_correct: Option<bool>,
    pub hub_writes: usize,
    pub hub_reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub write_trigger: Option<usize>,
    pub runs: usize,
    pub tasks: usize,
    /// Runs with a gold answer; the rule columns average over these.
    pub scored: usize,
    pub bon: f64,
    pub mv: f64,
    pub wmv: f64,
    pub fewtool: f64,
    pub avg: f64,
    pub pass_at_n: f64,
    pub selected: f64,
    pub mean_hub_writes: f64,
    pub mean_hub_reads: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<RunScores>,
    pub rows: Vec<ReportRow>,
}

fn parse_err(path: &Path, e: impl ToString) -> ReportError {
    ReportError::Parse { path: path.display().to_string(), message: e.to_string() }
}

pub fn score_run(run_dir: &Path) -> Result<RunScores, ReportError> {
    let manifest = RunManifest::load(run_dir).map_err(|e| match e {
        RunError::Io { path, message } | RunError::Manifest { path, message } => ReportError::Parse { path, message },
        other => parse_err(run_dir, other),
    })?;
    let events_path = run_dir.join(EVENTS_FILE);
    let events = read_jsonl(&events_path).map_err(|e| parse_err(&events_path, e))?;
    if events.len() != manifest.event_count {
        return Err(parse_err(&events_path, format!("{} events, manifest records {}", events.len(), manifest.event_count)));
    }
    let judge = ExactMatchJudge;
    let gold = manifest.config.task.gold_answer.clone();
    let result = &manifest.result;
    let scores = gold.as_deref().map(|g| {
        score_row(&result.candidates, g, &judge).unwrap_or(ScoreRow { n: 0, pass_at_n: 0.0, bon: 0.0, mv: 0.0, wmv: 0.0, fewtool: 0.0, avg: 0.0 })
    });
    let selected_correct = gold.as_deref().map(|g| result.selected.as_ref().is_some_and(|c| judge.judge(&c.answer, g)));
    Ok(RunScores {
        run_dir: run_dir.to_path_buf(),
        task_id: manifest.task_id.clone(),
        mode: manifest.mode.to_string(),
        write_trigger: manifest.config.write_trigger(),
        scores,
        selected_correct,
        hub_writes: result.hub_writes,
        hub_reads: result.hub_reads,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn build_report(run_dirs: &[PathBuf]) -> Result<Report, ReportError> {
    if run_dirs.is_empty() {
        return Err(ReportError::NoRuns);
    }
    let runs: Vec<RunScores> = run_dirs.iter().map(|d| score_run(d)).collect::<Result<_, _>>()?;
    let mut groups: BTreeMap<Option<usize>, Vec<&RunScores>> = BTreeMap::new();
    for r in &runs {
        groups.entry(r.write_trigger).or_default().push(r);
    }
    if groups.len() > 1 {
        let task_sets: Vec<(Option<usize>, Vec<&str>)> = groups
            .iter()
            .map(|(k, rs)| {
                let mut ids: Vec<&str> = rs.iter().map(|r| r.task_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                (*k, ids)
            })
            .collect();
        if task_sets.windows(2).any(|w| w[0].1 != w[1].1) {
            let detail = task_sets.iter().map(|(k, ids)| format!("{}: [{}]", label(*k), ids.join(", "))).collect::<Vec<_>>().join("; ");
            return Err(ReportError::MixedTasks(detail));
        }
    }
    let rows = groups
        .into_iter()
        .map(|(trigger, rs)| {
            let scored: Vec<&ScoreRow> = rs.iter().filter_map(|r| r.scores.as_ref()).collect();
            let mut tasks: Vec<&str> = rs.iter().map(|r| r.task_id.as_str()).collect();
            tasks.sort_unstable();
            tasks.dedup();
            ReportRow {
                write_trigger: trigger,
                runs: rs.len(),
                tasks: tasks.len(),
                scored: scored.len(),
                bon: mean(scored.iter().map(|s| s.bon)),
                mv: mean(scored.iter().map(|s| s.mv)),
                wmv: mean(scored.iter().map(|s| s.wmv)),
                fewtool: mean(scored.iter().map(|s| s.fewtool)),
                avg: mean(scored.iter().map(|s| s.avg)),
                pass_at_n: mean(scored.iter().map(|s| s.pass_at_n)),
                selected: mean(rs.iter().filter_map(|r| r.selected_correct).map(|b| if b { 1.0 } else { 0.0 })),
                mean_hub_writes: mean(rs.iter().map(|r| r.hub_writes as f64)),
                mean_hub_reads: mean(rs.iter().map(|r| r.hub_reads as f64)),
            }
        })
        .collect();
    Ok(Report { runs, rows })
}

fn label(trigger: Option<usize>) -> String {
    match trigger {
        Some(t) if t % 1024 == 0 => format!("{}K", t / 1024),
        Some(t) => t.to_string(),
        None => "-".into(),
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>4} {:>5} {:>6} {:>6} {:>6} {:>6} {:>7} {:>6} {:>6} {:>8} {:>7} {:>6}",
            "trigger", "runs", "tasks", "scored", "bon", "mv", "wmv", "fewtool", "avg", "pass@n", "selected", "writes", "reads"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>4} {:>5} {:>6} {:>6.3} {:>6.3} {:>6.3} {:>7.3} {:>6.3} {:>6.3} {:>8.3} {:>7.2} {:>6.2}",
                label(r.write_trigger),
                r.runs,
                r.tasks,
                r.scored,
                r.bon,
                r.mv,
                r.wmv,
                r.fewtool,
                r.avg,
                r.pass_at_n,
                r.selected,
                r.mean_hub_writes,
                r.mean_hub_reads
            );
        }
        out
    }
}
