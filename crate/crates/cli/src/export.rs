//! SFT pair export: (episode → note) from hub writes and
//! ((goal, pages, prior) → readout) from hub reads, in the same shape as the
//! hub's model calls.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use fugue_core::backends::ChatMessage;
use fugue_core::hub::{sha256_hex, HubStore};
use fugue_core::prompts::{consult_incremental_user, window_summary_user, CONSULT_SYSTEM, MEMORY_MANAGER_SYSTEM};
use fugue_core::runtime::events::read_jsonl;
use fugue_core::runtime::EventKind;
use fugue_core::types::EpisodeRef;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::run::{EVENTS_FILE, HUB_DIR};

pub const WRITE_PAIRS_FILE: &str = "write_pairs.jsonl";
pub const READ_PAIRS_FILE: &str = "read_pairs.jsonl";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{run}: {message}")]
    Inconsistent { run: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WritePair {
    pub run: String,
    pub owner: String,
    pub ordinal: u32,
    /// Raw episode text as the write model saw it.
    pub episode: String,
    pub messages: Vec<ChatMessage>,
    pub note: String,
    /// Fallback notes are not model outputs; trainers usually drop them.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadPage {
    pub episode_ref: String,
    pub content: String,
    pub previous_summary: String,
    pub messages: Vec<ChatMessage>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadPair {
    pub run: String,
    pub requester: String,
    pub goal: String,
    pub refs: Vec<String>,
    /// Summary the fold started from.
    pub prior: String,
    pub pages: Vec<ReadPage>,
    pub readout: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Export {
    pub writes: Vec<WritePair>,
    pub reads: Vec<ReadPair>,
}

fn parse_ref(s: &str) -> Option<EpisodeRef> {
    let (owner, ordinal) = s.strip_prefix('(')?.strip_suffix(')')?.rsplit_once(',')?;
    Some(EpisodeRef::new(owner, ordinal.parse().ok()?))
}

pub fn collect(run_dir: &Path) -> Result<Export, ExportError> {
    let run = run_dir.display().to_string();
    let inconsistent = |message: String| ExportError::Inconsistent { run: run.clone(), message };
    let events_path = run_dir.join(EVENTS_FILE);
    let events = read_jsonl(&events_path).map_err(|e| ExportError::Io { path: events_path.display().to_string(), message: e.to_string() })?;
    let store = HubStore::load(&run_dir.join(HUB_DIR)).map_err(|e| ExportError::Io { path: run_dir.join(HUB_DIR).display().to_string(), message: e.to_string() })?;
    let mut out = Export::default();
    for e in &events {
        match e.kind {
            EventKind::HubWrite => {
                let ordinal = e.u64_field("ordinal").ok_or_else(|| inconsistent(format!("hub_write #{} lacks an ordinal", e.seq)))? as u32;
                let r = EpisodeRef::new(e.agent_id.as_str(), ordinal);
                let episode = store.episode(&r).ok_or_else(|| inconsistent(format!("episode {r} missing from the hub")))?;
                let note = store.note(&r).ok_or_else(|| inconsistent(format!("note {r} missing from the hub")))?;
                let content = episode.render();
                out.writes.push(WritePair {
                    run: run.clone(),
                    owner: r.owner.to_string(),
                    ordinal,
                    messages: vec![ChatMessage::system(MEMORY_MANAGER_SYSTEM.trim_end()), ChatMessage::user(window_summary_user(&content))],
                    episode: content,
                    note: note.summary.clone(),
                    degraded: note.degraded,
                });
            }
            EventKind::HubRead => {
                let goal = e.str_field("goal").unwrap_or_default().to_string();
                let page_reads = e.payload.get("page_reads").and_then(Value::as_array).cloned().unwrap_or_default();
                let mut pages = Vec::with_capacity(page_reads.len());
                for p in &page_reads {
                    let s = |k: &str| p.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
                    let r = parse_ref(&s("ref")).ok_or_else(|| inconsistent(format!("hub_read #{} has a malformed ref", e.seq)))?;
                    let episode = store.episode(&r).ok_or_else(|| inconsistent(format!("episode {r} missing from the hub")))?;
                    let content = episode.render();
                    if sha256_hex(&content) != s("content_sha256") {
                        return Err(inconsistent(format!("stored episode {r} differs from what hub_read #{} consumed", e.seq)));
                    }
                    let previous_summary = s("previous_summary");
                    pages.push(ReadPage {
                        episode_ref: r.to_string(),
                        messages: vec![ChatMessage::system(CONSULT_SYSTEM.trim_end()), ChatMessage::user(consult_incremental_user(&goal, &previous_summary, &content))],
                        content,
                        previous_summary,
                        output: s("output"),
                    });
                }
                out.reads.push(ReadPair {
                    run: run.clone(),
                    requester: e.agent_id.clone(),
                    refs: pages.iter().map(|p| p.episode_ref.clone()).collect(),
                    prior: pages.first().map(|p| p.previous_summary.clone()).unwrap_or_default(),
                    goal,
                    pages,
                    readout: e.str_field("readout").unwrap_or_default().to_string(),
                });
            }
            _ => {}
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExportError> {
    let io = |e: std::io::Error| ExportError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for item in items {
        writeln!(f, "{}", serde_json::to_string(item).expect("pairs serialize")).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Writes `write_pairs.jsonl` and `read_pairs.jsonl` under `out_dir`.
pub fn export_sft(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Export, ExportError> {
    let mut all = Export::default();
    for d in run_dirs {
        let e = collect(d)?;
        all.writes.extend(e.writes);
        all.reads.extend(e.reads);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| ExportError::Io { path: out_dir.display().to_string(), message: e.to_string() })?;
    write_jsonl(&out_dir.join(WRITE_PAIRS_FILE), &all.writes)?;
    write_jsonl(&out_dir.join(READ_PAIRS_FILE), &all.reads)?;
    Ok(all)
}
