//! Domain types shared by the hub, the runtime and the aggregators.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokens::TokenCounter;

/// Identifier of a peer agent (or a baseline meta/sub agent).
///
/// Ordering is lexicographic and is the final tie-break everywhere.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Which task tools the runtime exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ToolProfile {
    /// search + visit
    #[default]
    #[serde(rename = "web")]
    Web,
    /// search + visit + python + scholar
    #[serde(rename = "web+python+scholar")]
    WebPythonScholar,
}

impl ToolProfile {
    pub fn allows(self, tool: &str) -> bool {
        match tool {
            "search" | "visit" => true,
            "python" | "scholar" => self == ToolProfile::WebPythonScholar,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub tool_profile: ToolProfile,
}

/// What the agent did in one turn: free-text reasoning plus an optional tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub arguments: Value,
}

impl ActionRecord {
    pub fn thought(reasoning: impl Into<String>) -> Self {
        Self {
            reasoning: reasoning.into(),
            tool: None,
            arguments: Value::Null,
        }
    }

    pub fn tool_call(reasoning: impl Into<String>, tool: impl Into<String>, arguments: Value) -> Self {
        Self {
            reasoning: reasoning.into(),
            tool: Some(tool.into()),
            arguments,
        }
    }

    /// Text form used both for token accounting and for prompts.
    pub fn render(&self) -> String {
        match &self.tool {
            None => self.reasoning.clone(),
            Some(tool) => {
                let args = serde_json::to_string(&self.arguments).unwrap_or_default();
                if self.reasoning.is_empty() {
                    format!("TOOL: {tool}\nARGS: {args}")
                } else {
                    format!("{}\nTOOL: {tool}\nARGS: {args}", self.reasoning)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: usize,
    pub action: ActionRecord,
    pub observation: String,
    pub token_cost: usize,
}

impl TrajectoryStep {
    pub fn new(index: usize, action: ActionRecord, observation: String, counter: &dyn TokenCounter) -> Self {
        let token_cost = counter.count(&action.render()) + counter.count(&observation);
        Self {
            index,
            action,
            observation,
            token_cost,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "[step {}]\n{}\nOBSERVATION:\n{}",
            self.index,
            self.action.render(),
            self.observation
        )
    }
}

/// `(owner, ordinal)`; ordinals are 1-based page numbers per owner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeRef {
    pub owner: AgentId,
    pub ordinal: u32,
}

impl EpisodeRef {
    pub fn new(owner: impl Into<AgentId>, ordinal: u32) -> Self {
        Self {
            owner: owner.into(),
            ordinal,
        }
    }
}

impl fmt::Display for EpisodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.owner, self.ordinal)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("episode has no steps")]
    Empty,
    #[error("ordinal must be >= 1")]
    ZeroOrdinal,
    #[error("step indices are not contiguous: expected {expected}, found {found}")]
    NonContiguous { expected: usize, found: usize },
}

/// A budget-closed contiguous chunk of one agent's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub owner: AgentId,
    pub ordinal: u32,
    pub steps: Vec<TrajectoryStep>,
    pub token_total: usize,
}

impl Episode {
    pub fn new(owner: AgentId, ordinal: u32, steps: Vec<TrajectoryStep>) -> Result<Self, EpisodeError> {
        if steps.is_empty() {
            return Err(EpisodeError::Empty);
        }
        if ordinal == 0 {
            return Err(EpisodeError::ZeroOrdinal);
        }
        let first = steps[0].index;
        for (offset, step) in steps.iter().enumerate() {
            if step.index != first + offset {
                return Err(EpisodeError::NonContiguous {
                    expected: first + offset,
                    found: step.index,
                });
            }
        }
        let token_total = steps.iter().map(|s| s.token_cost).sum();
        Ok(Self {
            owner,
            ordinal,
            steps,
            token_total,
        })
    }

    pub fn episode_ref(&self) -> EpisodeRef {
        EpisodeRef {
            owner: self.owner.clone(),
            ordinal: self.ordinal,
        }
    }

    /// Full raw content as handed to the write and read models.
    pub fn render(&self) -> String {
        self.steps
            .iter()
            .map(TrajectoryStep::render)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeNote {
    pub episode_ref: EpisodeRef,
    pub summary: String,
    pub created_at: u64,
    #[serde(default)]
    pub degraded: bool,
    #[serde(default)]
    pub terminal: bool,
}

/// An agent's working context: own notes, teammates' notes, readouts, and
/// the active (not yet written) segment, behind a fixed preamble.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkingContext {
    pub system_preamble: String,
    pub own_notes: Vec<EpisodeNote>,
    pub teammate_notes: Vec<EpisodeNote>,
    pub readouts: Vec<String>,
    pub active: Vec<TrajectoryStep>,
}

impl WorkingContext {
    pub fn new(system_preamble: impl Into<String>) -> Self {
        Self {
            system_preamble: system_preamble.into(),
            ..Self::default()
        }
    }

    pub fn active_tokens(&self) -> usize {
        self.active.iter().map(|s| s.token_cost).sum()
    }

    /// Tokens outside the active segment.
    pub fn resident_tokens(&self, counter: &dyn TokenCounter) -> usize {
        counter.count(&self.system_preamble)
            + self
                .own_notes
                .iter()
                .chain(&self.teammate_notes)
                .map(|n| counter.count(&n.summary))
                .sum::<usize>()
            + self.readouts.iter().map(|r| counter.count(r)).sum::<usize>()
    }

    pub fn token_size(&self, counter: &dyn TokenCounter) -> usize {
        self.resident_tokens(counter) + self.active_tokens()
    }

    pub fn next_step_index(&self, fallback: usize) -> usize {
        self.active.last().map(|s| s.index + 1).unwrap_or(fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub agent_id: AgentId,
    pub answer: String,
    pub confidence: f64,
    pub tool_calls: u32,
}

impl CandidateAnswer {
    pub fn new(agent_id: impl Into<AgentId>, answer: impl Into<String>, confidence: f64, tool_calls: u32) -> Self {
        Self {
            agent_id: agent_id.into(),
            answer: answer.into(),
            confidence: confidence.clamp(0.0, 1.0),
            tool_calls,
        }
    }
}
