//! Working-memory data: arc drafts, the agent trace and run results.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{ArcId, ArcType, EpisodeKey, SeriesId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftOrigin {
    Agent2,
    Agent3New,
    Agent3Validated,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftFlag {
    PossiblyPresent,
    NeedsDisambiguation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcDraft {
    /// Unique within one episode run (`d1`, `d2`, ...).
    pub provisional_id: String,
    /// Set when the draft continues an arc already in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_arc_id: Option<ArcId>,
    pub title: String,
    pub description: String,
    pub arc_type: ArcType,
    #[serde(default)]
    pub main_characters: Vec<String>,
    #[serde(default)]
    pub interfering_characters: Vec<String>,
    #[serde(default)]
    pub progression_content: Vec<String>,
    pub origin: DraftOrigin,
    #[serde(default)]
    pub flags: BTreeSet<DraftFlag>,
    /// Free-text notes carried into enhancement, e.g. this episode's
    /// developments of a validated arc.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ArcDraft {
    pub fn new(
        provisional_id: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
        arc_type: ArcType,
        origin: DraftOrigin,
    ) -> Self {
        Self {
            provisional_id: provisional_id.into(),
            existing_arc_id: None,
            title: title.into().trim().to_string(),
            description: description.into().trim().to_string(),
            arc_type,
            main_characters: Vec::new(),
            interfering_characters: Vec::new(),
            progression_content: Vec::new(),
            origin,
            flags: BTreeSet::new(),
            notes: Vec::new(),
        }
    }

    /// Short block used to show a draft to the LLM.
    pub fn brief(&self) -> String {
        format!(
            "Title: {}\nType: {}\nDescription: {}",
            self.title, self.arc_type, self.description
        )
    }
}

/// An arc from memory that Agent 1 thinks may continue in this episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedArc {
    pub arc_id: ArcId,
    pub title: String,
    pub description: String,
    pub arc_type: ArcType,
    pub score: f64,
}

/// One retrieval issued by Agent 1, kept so temporal integrity can be
/// checked after the fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub query: String,
    /// Retrieval admitted only episodes strictly before this one.
    pub before: EpisodeKey,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub arc_id: String,
    pub episode: Option<EpisodeKey>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub agent: u8,
    pub name: String,
    pub drafts_in: usize,
    pub drafts_out: usize,
    /// Fingerprints of every LLM request the agent made, in order.
    pub fingerprints: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrievals: Vec<RetrievalTrace>,
}

impl TraceEntry {
    pub fn new(agent: u8, drafts_in: usize) -> Self {
        Self {
            agent,
            name: agent_name(agent).to_string(),
            drafts_in,
            drafts_out: 0,
            fingerprints: Vec::new(),
            notes: Vec::new(),
            retrievals: Vec::new(),
        }
    }
}

pub fn agent_name(agent: u8) -> &'static str {
    match agent {
        1 => "identify_existing",
        2 => "extract_anthology",
        3 => "extract_serial",
        4 => "optimize_season",
        5 => "deduplicate",
        6 => "enhance_details",
        7 => "verify_progressions",
        8 => "verify_roles",
        9 => "final_review_and_commit",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CommitOutcome {
    Created { arc_id: ArcId },
    Linked { arc_id: ArcId, score: Option<f64> },
    Rejected { reason: String, codes: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftCommit {
    pub provisional_id: String,
    pub title: String,
    pub outcome: CommitOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeExtractionResult {
    pub series: SeriesId,
    pub episode: EpisodeKey,
    pub status: RunStatus,
    pub committed_arcs: Vec<ArcId>,
    pub new_arcs: usize,
    pub continued_arcs: usize,
    pub commits: Vec<DraftCommit>,
    pub unresolved_names: Vec<String>,
    pub agent_trace: Vec<TraceEntry>,
}

impl EpisodeExtractionResult {
    pub fn no_op(series: SeriesId, episode: EpisodeKey) -> Self {
        Self {
            series,
            episode,
            status: RunStatus::NoOp,
            committed_arcs: Vec::new(),
            new_arcs: 0,
            continued_arcs: 0,
            commits: Vec::new(),
            unresolved_names: Vec::new(),
            agent_trace: Vec::new(),
        }
    }
}

/// Progress events, one JSON object per line on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    RunStarted {
        series: SeriesId,
        episode: EpisodeKey,
        resumed_after: Option<u8>,
    },
    AgentCompleted {
        series: SeriesId,
        episode: EpisodeKey,
        agent: u8,
        name: String,
        drafts: usize,
        llm_calls: usize,
    },
    EpisodeCompleted {
        series: SeriesId,
        episode: EpisodeKey,
        new_arcs: usize,
        continued_arcs: usize,
        rejected: usize,
    },
    EpisodeSkipped {
        series: SeriesId,
        episode: EpisodeKey,
        reason: String,
    },
    RunCompleted {
        series: SeriesId,
        season: u32,
        episodes: usize,
    },
    RunFailed {
        series: SeriesId,
        episode: Option<EpisodeKey>,
        agent: Option<u8>,
        code: String,
        message: String,
    },
}
