use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HubError;
use crate::types::{AgentId, Episode, EpisodeNote, EpisodeRef, TrajectoryStep};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteLogEntry {
    pub created_at: u64,
    pub episode_ref: EpisodeRef,
}

/// Append-only storage of raw episodes and their notes.
///
/// Notes and raw episodes are committed together, so both maps always share
/// the same key set.
#[derive(Debug, Clone, Default)]
pub struct HubStore {
    episodes: BTreeMap<EpisodeRef, Episode>,
    notes: BTreeMap<EpisodeRef, EpisodeNote>,
    write_log: Vec<WriteLogEntry>,
    clock: u64,
}

impl HubStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn max_ordinal(&self, owner: &AgentId) -> u32 {
        self.episodes
            .range(EpisodeRef::new(owner.clone(), 0)..=EpisodeRef::new(owner.clone(), u32::MAX))
            .next_back()
            .map(|(r, _)| r.ordinal)
            .unwrap_or(0)
    }

    pub fn next_ordinal(&self, owner: &AgentId) -> u32 {
        self.max_ordinal(owner) + 1
    }

    pub fn check_ordinal(&self, episode: &Episode) -> Result<(), HubError> {
        let expected = self.next_ordinal(&episode.owner);
        if episode.ordinal == expected {
            Ok(())
        } else if episode.ordinal < expected {
            Err(HubError::DuplicateOrdinal(episode.episode_ref()))
        } else {
            Err(HubError::OrdinalGap { got: episode.episode_ref(), expected })
        }
    }

    /// Stores `episode` with its note and appends to the write log.
    pub fn commit(&mut self, episode: Episode, summary: String, degraded: bool, terminal: bool) -> Result<EpisodeNote, HubError> {
        self.check_ordinal(&episode)?;
        self.clock += 1;
        let episode_ref = episode.episode_ref();
        let note = EpisodeNote { episode_ref: episode_ref.clone(), summary, created_at: self.clock, degraded, terminal };
        self.write_log.push(WriteLogEntry { created_at: self.clock, episode_ref: episode_ref.clone() });
        self.notes.insert(episode_ref.clone(), note.clone());
        self.episodes.insert(episode_ref, episode);
        Ok(note)
    }

    pub fn episode(&self, r: &EpisodeRef) -> Option<&Episode> {
        self.episodes.get(r)
    }

    pub fn note(&self, r: &EpisodeRef) -> Option<&EpisodeNote> {
        self.notes.get(r)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.values()
    }

    pub fn notes_in_write_order(&self) -> impl Iterator<Item = &EpisodeNote> {
        self.write_log.iter().map(|e| &self.notes[&e.episode_ref])
    }

    pub fn write_log(&self) -> &[WriteLogEntry] {
        &self.write_log
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn keys_consistent(&self) -> bool {
        self.episodes.keys().eq(self.notes.keys())
    }

    /// Teammates' notes (owner ≠ requester) in write order.
    pub fn visible_notes(&self, requester: &AgentId) -> Vec<EpisodeNote> {
        self.notes_in_write_order().filter(|n| &n.episode_ref.owner != requester).cloned().collect()
    }

    /// Local page number of a note: its 1-based position in the write log.
    pub fn page_number(&self, r: &EpisodeRef) -> Option<usize> {
        self.write_log.iter().position(|e| &e.episode_ref == r).map(|i| i + 1)
    }

    pub fn resolve_page(&self, page: usize) -> Option<EpisodeRef> {
        page.checked_sub(1).and_then(|i| self.write_log.get(i)).map(|e| e.episode_ref.clone())
    }

    pub fn owners(&self) -> BTreeSet<AgentId> {
        self.episodes.keys().map(|r| r.owner.clone()).collect()
    }

    /// Reloads a persisted hub directory (`episodes/<owner>/<ordinal>.jsonl`, `notes.jsonl`).
    pub fn load(dir: &Path) -> Result<Self, HubError> {
        let mut store = HubStore::new();
        let notes_path = dir.join("notes.jsonl");
        let text = match fs::read_to_string(&notes_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(HubError::Io(e.to_string())),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let note: EpisodeNote = serde_json::from_str(line).map_err(|e| HubError::Io(e.to_string()))?;
            let r = note.episode_ref.clone();
            let steps_text = fs::read_to_string(episode_path(dir, &r)).map_err(|e| HubError::Io(e.to_string()))?;
            let steps = steps_text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str::<TrajectoryStep>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HubError::Io(e.to_string()))?;
            let episode = Episode::new(r.owner.clone(), r.ordinal, steps).map_err(|e| HubError::Io(e.to_string()))?;
            store.clock = note.created_at.max(store.clock);
            store.write_log.push(WriteLogEntry { created_at: note.created_at, episode_ref: r.clone() });
            store.notes.insert(r.clone(), note);
            store.episodes.insert(r, episode);
        }
        Ok(store)
    }
}

pub fn episode_path(dir: &Path, r: &EpisodeRef) -> PathBuf {
    dir.join("episodes").join(r.owner.as_str()).join(format!("{}.jsonl", r.ordinal))
}

/// One step per line, exactly as stored on disk.
pub fn episode_jsonl(episode: &Episode) -> String {
    let mut out = String::new();
    for step in &episode.steps {
        out.push_str(&serde_json::to_string(step).expect("steps serialize"));
        out.push('\n');
    }
    out
}

/// Line-oriented on-disk mirror of a [`HubStore`].
#[derive(Debug, Clone)]
pub struct HubPersistence {
    dir: PathBuf,
}

impl HubPersistence {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, HubError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("episodes")).map_err(|e| HubError::Io(e.to_string()))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&self, episode: &Episode, note: &EpisodeNote) -> Result<(), HubError> {
        let io = |e: std::io::Error| HubError::Io(e.to_string());
        let path = episode_path(&self.dir, &note.episode_ref);
        fs::create_dir_all(path.parent().expect("episode path has a parent")).map_err(io)?;
        fs::write(&path, episode_jsonl(episode)).map_err(io)?;
        let mut notes = OpenOptions::new().create(true).append(true).open(self.dir.join("notes.jsonl")).map_err(io)?;
        let line = serde_json::to_string(note).expect("notes serialize");
        writeln!(notes, "{line}").map_err(io)?;
        Ok(())
    }
}
