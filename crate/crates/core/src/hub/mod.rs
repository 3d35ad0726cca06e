//! The shared reasoning hub.
//!
//! Agents write closed episodes here; the write model compresses each one
//! into a note that every teammate can see, and the raw steps stay in
//! storage. Reading is intent-driven: a requester names up to five pages
//! and a goal, and the read model folds the raw pages one at a time through
//! the incremental consult template.
//!
//! The hub is the only shared mutable state in a run. Model calls happen
//! outside the store lock; the commit (raw episode + note + write-log entry)
//! is a single critical section, which is the linearization point of a write.

mod store;

use std::collections::BTreeSet;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::prompts;
use crate::tokens::{truncate_to_tokens, TokenCounter};
use crate::toolenv::MAX_MEMORY_PAGES;
use crate::types::{AgentId, Episode, EpisodeNote, EpisodeRef, WorkingContext};

pub use store::{episode_jsonl, episode_path, HubPersistence, HubStore, WriteLogEntry};

/// Token length of the fallback note used when the write model fails.
pub const DEGRADED_NOTE_TOKENS: usize = 512;

/// `previous_summary` for the first page of a read without a prior summary.
pub const NO_PRIOR_SUMMARY: &str = "(none)";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum HubError {
    #[error("episode {0} already exists")]
    DuplicateOrdinal(EpisodeRef),
    #[error("episode {got} skips ahead; next ordinal for this owner is {expected}")]
    OrdinalGap { got: EpisodeRef, expected: u32 },
    #[error("unknown episode (owner {}, ordinal {})", .0.owner, .0.ordinal)]
    UnknownEpisode(EpisodeRef),
    #[error("read request names no pages")]
    EmptyRefs,
    #[error("read request names {0} pages; at most 5 are allowed")]
    TooManyRefs(usize),
    #[error("consult requests may not include the requester's own episode {0}")]
    OwnEpisode(EpisodeRef),
    #[error("eviction mismatch: {0}")]
    EvictionMismatch(String),
    #[error("read model failed: {0}")]
    ReadModel(BackendError),
    #[error("hub storage: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadRequest {
    pub requester: AgentId,
    pub intent: String,
    pub refs: BTreeSet<EpisodeRef>,
    #[serde(default)]
    pub prior_summary: Option<String>,
}

impl ReadRequest {
    pub fn new(requester: impl Into<AgentId>, intent: impl Into<String>, refs: impl IntoIterator<Item = EpisodeRef>) -> Self {
        Self { requester: requester.into(), intent: intent.into(), refs: refs.into_iter().collect(), prior_summary: None }
    }

    pub fn validate(&self) -> Result<(), HubError> {
        match self.refs.len() {
            0 => Err(HubError::EmptyRefs),
            n if n > MAX_MEMORY_PAGES => Err(HubError::TooManyRefs(n)),
            _ => Ok(()),
        }
    }

    /// Validation for the teammate-consult path, which excludes own pages.
    pub fn validate_consult(&self) -> Result<(), HubError> {
        self.validate()?;
        match self.refs.iter().find(|r| r.owner == self.requester) {
            Some(own) => Err(HubError::OwnEpisode(own.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteOutcome {
    pub note: EpisodeNote,
    /// Set when the write model failed and the note is a fallback.
    pub model_error: Option<BackendError>,
}

/// One fold step of a read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRead {
    pub episode_ref: EpisodeRef,
    pub content_sha256: String,
    pub previous_summary: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub text: String,
    pub pages: Vec<PageRead>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Fallback note: the first [`DEGRADED_NOTE_TOKENS`] tokens of the episode's action texts.
pub fn degraded_summary(episode: &Episode, counter: &dyn TokenCounter) -> String {
    let actions = episode.steps.iter().map(|s| s.action.render()).collect::<Vec<_>>().join("\n");
    let head = truncate_to_tokens(counter, actions.trim(), DEGRADED_NOTE_TOKENS);
    if head.is_empty() {
        "(no recorded actions)".to_string()
    } else {
        head.to_string()
    }
}

pub struct Hub {
    store: RwLock<HubStore>,
    write_model: Arc<dyn ChatBackend>,
    read_model: Arc<dyn ChatBackend>,
    counter: Arc<dyn TokenCounter>,
    persistence: Option<HubPersistence>,
}

impl Hub {
    pub fn new(write_model: Arc<dyn ChatBackend>, read_model: Arc<dyn ChatBackend>, counter: Arc<dyn TokenCounter>) -> Self {
        Self { store: RwLock::new(HubStore::new()), write_model, read_model, counter, persistence: None }
    }

    pub fn with_persistence(mut self, persistence: HubPersistence) -> Self {
        self.persistence = Some(persistence);
        self
    }

    /// Runs `f` against a consistent snapshot of the store.
    pub fn inspect<R>(&self, f: impl FnOnce(&HubStore) -> R) -> R {
        f(&self.store.read().expect("hub store poisoned"))
    }

    pub fn next_ordinal(&self, owner: &AgentId) -> u32 {
        self.inspect(|s| s.next_ordinal(owner))
    }

    pub fn visible_notes(&self, requester: &AgentId) -> Vec<EpisodeNote> {
        self.inspect(|s| s.visible_notes(requester))
    }

    pub fn page_number(&self, r: &EpisodeRef) -> Option<usize> {
        self.inspect(|s| s.page_number(r))
    }

    pub fn resolve_page(&self, page: usize) -> Option<EpisodeRef> {
        self.inspect(|s| s.resolve_page(page))
    }

    /// Compresses `episode` with the write model and commits raw episode + note.
    pub fn write_episode(&self, episode: Episode, terminal: bool) -> Result<WriteOutcome, HubError> {
        self.inspect(|s| s.check_ordinal(&episode))?;
        let request = ChatRequest::new(
            "",
            vec![
                ChatMessage::system(prompts::MEMORY_MANAGER_SYSTEM.trim_end()),
                ChatMessage::user(prompts::window_summary_user(&episode.render())),
            ],
        )
        .with_tag("hub", "write")
        .with_tag("owner", &episode.owner)
        .with_tag("ordinal", episode.ordinal)
        .with_tag("terminal", terminal);

        let (summary, degraded, model_error) = match self.write_model.chat(&request) {
            Ok(resp) if !resp.content.trim().is_empty() => (resp.content.trim().to_string(), false, None),
            Ok(_) => (
                degraded_summary(&episode, self.counter.as_ref()),
                true,
                Some(BackendError::Malformed { message: "write model returned an empty note".into() }),
            ),
            Err(e) => (degraded_summary(&episode, self.counter.as_ref()), true, Some(e)),
        };

        let mut store = self.store.write().expect("hub store poisoned");
        let stored = episode.clone();
        let note = store.commit(episode, summary, degraded, terminal)?;
        if let Some(p) = &self.persistence {
            p.append(&stored, &note)?;
        }
        Ok(WriteOutcome { note, model_error })
    }

    /// Folds the referenced raw pages, in `(owner, ordinal)` order, through the read model.
    pub fn read(&self, request: &ReadRequest) -> Result<Readout, HubError> {
        request.validate()?;
        let pages: Vec<(Episode, usize)> = self.inspect(|s| {
            request
                .refs
                .iter()
                .map(|r| {
                    let ep = s.episode(r).cloned().ok_or_else(|| HubError::UnknownEpisode(r.clone()))?;
                    Ok((ep, s.page_number(r).unwrap_or(0)))
                })
                .collect::<Result<Vec<_>, HubError>>()
        })?;

        let mut running = request.prior_summary.clone().unwrap_or_else(|| NO_PRIOR_SUMMARY.to_string());
        let mut trace = Vec::with_capacity(pages.len());
        for (step, (episode, page)) in pages.iter().enumerate() {
            let content = episode.render();
            let req = ChatRequest::new(
                "",
                vec![
                    ChatMessage::system(prompts::CONSULT_SYSTEM.trim_end()),
                    ChatMessage::user(prompts::consult_incremental_user(&request.intent, &running, &content)),
                ],
            )
            .with_tag("hub", "read")
            .with_tag("requester", &request.requester)
            .with_tag("goal", &request.intent)
            .with_tag("owner", &episode.owner)
            .with_tag("ordinal", episode.ordinal)
            .with_tag("page", page)
            .with_tag("fold", step);
            let resp = self.read_model.chat(&req).map_err(HubError::ReadModel)?;
            let output = resp.content.trim().to_string();
            trace.push(PageRead {
                episode_ref: episode.episode_ref(),
                content_sha256: sha256_hex(&content),
                previous_summary: std::mem::replace(&mut running, output.clone()),
                output,
            });
        }
        Ok(Readout { text: running, pages: trace })
    }
}

/// Replaces the context's active segment (which must be exactly `episode`'s
/// steps) with `note`, appended to the own notes.
pub fn evict_and_replace(context: &WorkingContext, episode: &Episode, note: EpisodeNote) -> Result<WorkingContext, HubError> {
    if context.active.is_empty() {
        return Err(HubError::EvictionMismatch("active segment is empty".into()));
    }
    if note.episode_ref != episode.episode_ref() {
        return Err(HubError::EvictionMismatch(format!(
            "note refers to {} but episode is {}",
            note.episode_ref,
            episode.episode_ref()
        )));
    }
    if context.active != episode.steps {
        return Err(HubError::EvictionMismatch("active segment differs from the written episode".into()));
    }
    if let Some(last) = context.own_notes.last() {
        if last.episode_ref.ordinal >= note.episode_ref.ordinal {
            return Err(HubError::EvictionMismatch("own notes must stay ordered by ordinal".into()));
        }
    }
    let mut next = context.clone();
    next.active.clear();
    next.own_notes.push(note);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Matcher, Script, ScriptedBackend, ScriptedResponse};
    use crate::tokens::ByteQuarterCounter;
    use crate::types::{ActionRecord, TrajectoryStep};
    use serde_json::json;

    fn steps(n: usize, start: usize, obs: &str) -> Vec<TrajectoryStep> {
        (start..start + n)
            .map(|i| {
                TrajectoryStep::new(
                    i,
                    ActionRecord::tool_call(format!("thought {i}"), "search", json!({"queries": [format!("q{i}")]})),
                    obs.to_string(),
                    &ByteQuarterCounter,
                )
            })
            .collect()
    }

    fn scripted(name: &str, content: &str) -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(name, Script::new().rule(Matcher::any(), ScriptedResponse::text(content))))
    }

    fn hub_with(write: Arc<ScriptedBackend>, read: Arc<ScriptedBackend>) -> Hub {
        Hub::new(write, read, Arc::new(ByteQuarterCounter))
    }

    fn episode(owner: &str, ordinal: u32, n: usize) -> Episode {
        Episode::new(owner.into(), ordinal, steps(n, 0, "obs")).unwrap()
    }

    #[test]
    fn write_stores_note_and_raw_episode() {
        let w = scripted("w", "SUMMARY(owner={owner},page={ordinal})");
        let hub = hub_with(w.clone(), scripted("r", "x"));
        let out = hub.write_episode(episode("A", 1, 3), false).unwrap();
        assert_eq!(out.note.summary, "SUMMARY(owner=A,page=1)");
        assert_eq!(out.note.episode_ref, EpisodeRef::new("A", 1));
        assert!(!out.note.degraded);
        hub.inspect(|s| {
            assert_eq!(s.episode(&EpisodeRef::new("A", 1)).unwrap().steps.len(), 3);
            assert!(s.keys_consistent());
        });
        let call = &w.trace()[0].request;
        assert!(call.messages[0].content.starts_with("You are a memory manager for a research agent"));
        assert!(call.messages[1].content.starts_with("Previous conversation and tool-use history:\n[step 0]"));
    }

    #[test]
    fn successive_writes_increment_ordinals() {
        let hub = hub_with(scripted("w", "NOTE({ordinal})"), scripted("r", "x"));
        hub.write_episode(episode("A", 1, 1), false).unwrap();
        let second = hub.write_episode(episode("A", 2, 1), false).unwrap();
        assert_eq!(second.note.summary, "NOTE(2)");
        hub.inspect(|s| {
            assert_eq!(s.write_log().len(), 2);
            assert_eq!(s.write_log()[1].created_at, 2);
        });
    }

    #[test]
    fn duplicate_and_gapped_ordinals_are_rejected() {
        let w = scripted("w", "n");
        let hub = hub_with(w.clone(), scripted("r", "x"));
        hub.write_episode(episode("A", 1, 1), false).unwrap();
        assert_eq!(hub.write_episode(episode("A", 1, 1), false).unwrap_err(), HubError::DuplicateOrdinal(EpisodeRef::new("A", 1)));
        assert!(matches!(hub.write_episode(episode("A", 3, 1), false), Err(HubError::OrdinalGap { expected: 2, .. })));
        // rejected before the model is called
        assert_eq!(w.calls(), 1);
    }

    #[test]
    fn failed_write_model_degrades_note() {
        let w = Arc::new(ScriptedBackend::new("w", Script::new().rule(Matcher::any(), ScriptedResponse::failure("down"))));
        let hub = hub_with(w, scripted("r", "x"));
        let out = hub.write_episode(episode("A", 1, 2), false).unwrap();
        assert!(out.note.degraded);
        assert!(out.model_error.is_some());
        assert!(out.note.summary.starts_with("thought 0\nTOOL: search"));
        hub.inspect(|s| assert!(s.episode(&EpisodeRef::new("A", 1)).is_some()));
    }

    #[test]
    fn degraded_summary_is_capped_at_512_tokens() {
        let long: Vec<TrajectoryStep> = (0..50)
            .map(|i| TrajectoryStep::new(i, ActionRecord::thought("w".repeat(400)), String::new(), &ByteQuarterCounter))
            .collect();
        let ep = Episode::new("A".into(), 1, long).unwrap();
        let s = degraded_summary(&ep, &ByteQuarterCounter);
        assert_eq!(ByteQuarterCounter.count(&s), DEGRADED_NOTE_TOKENS);
    }

    #[test]
    fn read_echoes_goal_and_page() {
        let hub = hub_with(scripted("w", "n"), scripted("r", "EXTRACT({goal},({owner},{ordinal}))"));
        hub.write_episode(episode("B", 1, 1), false).unwrap();
        hub.write_episode(episode("B", 2, 1), false).unwrap();
        let req = ReadRequest::new("A", "find founding year", [EpisodeRef::new("B", 2)]);
        assert_eq!(hub.read(&req).unwrap().text, "EXTRACT(find founding year,(B,2))");
    }

    #[test]
    fn read_threads_previous_summary_through_pages() {
        let r = scripted("r", "OUT{call}");
        let hub = hub_with(scripted("w", "n"), r.clone());
        hub.write_episode(episode("B", 1, 1), false).unwrap();
        hub.write_episode(episode("C", 1, 2), false).unwrap();
        let req = ReadRequest::new("A", "goal", [EpisodeRef::new("C", 1), EpisodeRef::new("B", 1)]);
        let out = hub.read(&req).unwrap();
        let trace = r.trace();
        assert_eq!(trace.len(), 2);
        assert!(trace[0].request.messages[1].content.contains("Previous extracted results:\n(none)\n"));
        assert!(trace[1].request.messages[1].content.contains("Previous extracted results:\nOUT0\n"));
        assert_eq!(out.text, "OUT1");
        // (owner, ordinal) ascending: B before C
        assert_eq!(out.pages[0].episode_ref, EpisodeRef::new("B", 1));
        assert_eq!(out.pages[1].previous_summary, "OUT0");
    }

    #[test]
    fn read_model_receives_raw_steps_not_notes() {
        let r = scripted("r", "ok");
        let hub = hub_with(scripted("w", "COMPRESSED NOTE"), r.clone());
        let ep = episode("B", 1, 2);
        let raw = ep.render();
        hub.write_episode(ep, false).unwrap();
        let out = hub.read(&ReadRequest::new("A", "g", [EpisodeRef::new("B", 1)])).unwrap();
        let user = &r.trace()[0].request.messages[1].content;
        assert!(user.contains(&raw));
        assert!(!user.contains("COMPRESSED NOTE"));
        assert_eq!(out.pages[0].content_sha256, sha256_hex(&raw));
    }

    #[test]
    fn read_validation() {
        let r = scripted("r", "x");
        let hub = hub_with(scripted("w", "n"), r.clone());
        let six = (1..=6).map(|i| EpisodeRef::new("B", i));
        assert_eq!(hub.read(&ReadRequest::new("A", "g", six)).unwrap_err(), HubError::TooManyRefs(6));
        assert_eq!(hub.read(&ReadRequest::new("A", "g", [])).unwrap_err(), HubError::EmptyRefs);
        let missing = hub.read(&ReadRequest::new("A", "g", [EpisodeRef::new("B", 9)])).unwrap_err();
        assert_eq!(missing.to_string(), "unknown episode (owner B, ordinal 9)");
        assert_eq!(r.calls(), 0);
        let own = ReadRequest::new("A", "g", [EpisodeRef::new("A", 1)]);
        assert!(matches!(own.validate_consult(), Err(HubError::OwnEpisode(_))));
    }

    #[test]
    fn visible_notes_exclude_requester_and_follow_write_order() {
        let hub = hub_with(scripted("w", "{owner}{ordinal}"), scripted("r", "x"));
        assert!(hub.visible_notes(&"C".into()).is_empty());
        hub.write_episode(episode("A", 1, 1), false).unwrap();
        hub.write_episode(episode("B", 1, 1), false).unwrap();
        hub.write_episode(episode("A", 2, 1), false).unwrap();
        let for_a: Vec<_> = hub.visible_notes(&"A".into()).into_iter().map(|n| n.summary).collect();
        assert_eq!(for_a, ["B1"]);
        let for_c: Vec<_> = hub.visible_notes(&"C".into()).into_iter().map(|n| n.summary).collect();
        assert_eq!(for_c, ["A1", "B1", "A2"]);
        assert_eq!(hub.resolve_page(3), Some(EpisodeRef::new("A", 2)));
        assert_eq!(hub.resolve_page(0), None);
        assert_eq!(hub.resolve_page(4), None);
    }

    #[test]
    fn eviction_replaces_active_with_note() {
        // 64,000-token active segment and a 500-token note
        let big = TrajectoryStep::new(0, ActionRecord::thought(""), "o".repeat(256_000), &ByteQuarterCounter);
        assert_eq!(big.token_cost, 64_000);
        let ep = Episode::new("A".into(), 1, vec![big.clone()]).unwrap();
        let mut ctx = WorkingContext::new("preamble");
        ctx.readouts.push("r".into());
        ctx.active.push(big);
        let note = EpisodeNote { episode_ref: EpisodeRef::new("A", 1), summary: "n".repeat(2000), created_at: 1, degraded: false, terminal: false };
        let before = ctx.token_size(&ByteQuarterCounter);
        let after_ctx = evict_and_replace(&ctx, &ep, note).unwrap();
        assert_eq!(before - after_ctx.token_size(&ByteQuarterCounter), 63_500);
        assert!(after_ctx.active.is_empty());
        assert_eq!(after_ctx.own_notes.len(), 1);
        assert_eq!(after_ctx.readouts, ctx.readouts);
        assert_eq!(after_ctx.system_preamble, ctx.system_preamble);
    }

    #[test]
    fn eviction_rejects_empty_or_mismatched_active() {
        let ep = episode("A", 1, 2);
        let note = EpisodeNote { episode_ref: ep.episode_ref(), summary: "n".into(), created_at: 1, degraded: false, terminal: false };
        let empty = WorkingContext::new("p");
        assert!(matches!(evict_and_replace(&empty, &ep, note.clone()), Err(HubError::EvictionMismatch(_))));
        let mut other = WorkingContext::new("p");
        other.active = steps(2, 0, "different");
        assert!(matches!(evict_and_replace(&other, &ep, note), Err(HubError::EvictionMismatch(_))));
    }

    #[test]
    fn persisted_hub_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let hub = hub_with(scripted("w", "N{owner}{ordinal}"), scripted("r", "x"))
            .with_persistence(HubPersistence::new(dir.path()).unwrap());
        hub.write_episode(episode("A", 1, 2), false).unwrap();
        hub.write_episode(episode("B", 1, 1), true).unwrap();
        let loaded = HubStore::load(dir.path()).unwrap();
        hub.inspect(|s| {
            assert_eq!(s.write_log(), loaded.write_log());
            for ep in s.episodes() {
                assert_eq!(loaded.episode(&ep.episode_ref()), Some(ep));
                let on_disk = std::fs::read_to_string(episode_path(dir.path(), &ep.episode_ref())).unwrap();
                assert_eq!(on_disk, episode_jsonl(ep));
            }
        });
        assert!(loaded.note(&EpisodeRef::new("B", 1)).unwrap().terminal);
    }
}
