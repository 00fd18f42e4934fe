//! The working-memory simulation: nine agents run in order over one
//! normalized episode, then each surviving draft is committed to long-term
//! memory. Runs checkpoint after every agent and resume from there.

pub mod agents;
pub mod commit;
pub mod drafts;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingProvider, Gateway, GatewayError};
use crate::memory::{ArcListFilter, MemoryError, MemoryStore};
use crate::model::{EpisodeKey, ModelError, SeriesId};
use crate::preprocess::{self, DocStatus, EpisodeDocument, PreprocessError};

pub use agents::AgentContext;
pub use commit::{agent9_final_review, semantic_commit, Verdict};
pub use drafts::{
    agent_name, ArcDraft, CommitOutcome, DraftCommit, DraftFlag, DraftOrigin,
    EpisodeExtractionResult, FlaggedArc, RetrievalHit, RetrievalTrace, RunEvent, RunStatus,
    TraceEntry,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Agent 1 flags stored arcs scoring at least this (cosine).
    pub theta_flag: f64,
    /// Semantic commit asks about candidates scoring at least this.
    pub theta_dedup: f64,
    pub retrieval_k: usize,
    /// Sentences per paragraph query in Agent 1.
    pub paragraph_sentences: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta_flag: 0.55,
            theta_dedup: 0.80,
            retrieval_k: 10,
            paragraph_sentences: 5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("theta_flag", self.theta_flag), ("theta_dedup", self.theta_dedup)] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [-1, 1]"));
            }
        }
        if self.retrieval_k == 0 {
            return Err("retrieval_k must be at least 1".into());
        }
        if self.paragraph_sentences == 0 {
            return Err("paragraph_sentences must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{episode} cannot run before {missing:?} are processed")]
    Ordering {
        episode: EpisodeKey,
        missing: Vec<EpisodeKey>,
    },
    #[error("{0} is not normalized; run preprocessing first")]
    NotNormalized(EpisodeKey),
    #[error("agent {agent}: {message}")]
    Postcondition { agent: u8, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Ordering { .. } => "ORDERING",
            PipelineError::NotNormalized(_) => "NOT_NORMALIZED",
            PipelineError::Postcondition { .. } => "AGENT_POSTCONDITION",
            PipelineError::Checkpoint(_) => "CHECKPOINT",
            PipelineError::Gateway(e) => e.code(),
            PipelineError::Memory(e) => e.code(),
            PipelineError::Preprocess(e) => e.code(),
            PipelineError::Model(_) => "MODEL",
        }
    }
}

/// Saved after every completed agent so a failed run can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub series: SeriesId,
    pub episode: EpisodeKey,
    pub completed_agent: u8,
    pub next_id: usize,
    pub flagged: Vec<FlaggedArc>,
    pub drafts: Vec<ArcDraft>,
    pub unresolved_names: BTreeSet<String>,
    pub trace: Vec<TraceEntry>,
    /// Agent 9's verdicts once given, so a resumed commit sees the same.
    pub verdicts: Option<Vec<Verdict>>,
    pub commits: Vec<DraftCommit>,
}

impl Checkpoint {
    fn fresh(series: SeriesId, episode: EpisodeKey) -> Self {
        Self {
            series,
            episode,
            completed_agent: 0,
            next_id: 0,
            flagged: Vec::new(),
            drafts: Vec::new(),
            unresolved_names: BTreeSet::new(),
            trace: Vec::new(),
            verdicts: None,
            commits: Vec::new(),
        }
    }
}

pub fn runs_dir(workspace: &Path, series: &SeriesId) -> PathBuf {
    workspace.join("runs").join(series.as_str())
}

pub fn checkpoint_path(workspace: &Path, series: &SeriesId, episode: EpisodeKey) -> PathBuf {
    runs_dir(workspace, series).join(format!("{episode}.checkpoint.json"))
}

pub fn result_path(workspace: &Path, series: &SeriesId, episode: EpisodeKey) -> PathBuf {
    runs_dir(workspace, series).join(format!("{episode}.result.json"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let err = |e: std::io::Error| PipelineError::Checkpoint(format!("{}: {e}", path.display()));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

pub fn load_checkpoint(
    workspace: &Path,
    series: &SeriesId,
    episode: EpisodeKey,
) -> Result<Option<Checkpoint>, PipelineError> {
    let path = checkpoint_path(workspace, series, episode);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(PipelineError::Checkpoint(format!("{}: {e}", path.display()))),
    }
}

/// Binds the stores, gateway and workspace for a series of episode runs.
pub struct Pipeline<'a> {
    pub memory: &'a MemoryStore,
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub config: PipelineConfig,
    pub workspace: &'a Path,
}

impl<'a> Pipeline<'a> {
    /// Episodes of `season` that must be processed before `episode`.
    fn missing_predecessors(
        &self,
        series: &SeriesId,
        episode: EpisodeKey,
    ) -> Result<Vec<EpisodeKey>, PipelineError> {
        let processed = self.memory.relational.processed_episodes(series)?;
        let mut known: BTreeSet<EpisodeKey> = preprocess::staged_episodes(self.workspace, series)?
            .into_iter()
            .collect();
        known.extend(processed.iter().copied());
        Ok(known
            .into_iter()
            .filter(|e| e.season() == episode.season() && *e < episode && !processed.contains(e))
            .collect())
    }

    /// Removes everything an earlier run of `episode` committed.
    pub fn purge_episode(&self, series: &SeriesId, episode: EpisodeKey) -> Result<(), PipelineError> {
        let arcs = self.memory.relational.list_arcs(&ArcListFilter {
            series: Some(series.clone()),
            ..Default::default()
        })?;
        for mut arc in arcs {
            if arc.progression_for(episode).is_none() {
                continue;
            }
            arc.progressions.retain(|p| p.episode != episode);
            if arc.progressions.is_empty() {
                self.memory.delete_arc(&arc.arc_id)?;
            } else {
                self.memory.relational.save_arc(&arc)?;
                self.memory.refresh_embeddings(&arc.arc_id, self.embedder)?;
            }
        }
        self.memory.relational.unmark_processed(series, episode)?;
        let cp = checkpoint_path(self.workspace, series, episode);
        if cp.exists() {
            fs::remove_file(&cp).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }

    /// Runs Agents 1–9 over a normalized episode and commits the result.
    pub fn run_episode(
        &self,
        series: &SeriesId,
        episode: EpisodeKey,
        force: bool,
        sink: &mut dyn FnMut(&RunEvent),
    ) -> Result<EpisodeExtractionResult, PipelineError> {
        let mut current_agent = None;
        let out = self.run_episode_inner(series, episode, force, sink, &mut current_agent);
        if let Err(e) = &out {
            sink(&RunEvent::RunFailed {
                series: series.clone(),
                episode: Some(episode),
                agent: current_agent,
                code: e.code().to_string(),
                message: e.to_string(),
            });
        }
        out
    }

    fn run_episode_inner(
        &self,
        series: &SeriesId,
        episode: EpisodeKey,
        force: bool,
        sink: &mut dyn FnMut(&RunEvent),
        current_agent: &mut Option<u8>,
    ) -> Result<EpisodeExtractionResult, PipelineError> {
        self.config
            .validate()
            .map_err(|m| PipelineError::Checkpoint(format!("bad configuration: {m}")))?;
        if self.memory.relational.processed_result(series, episode)?.is_some() {
            if !force {
                sink(&RunEvent::EpisodeSkipped {
                    series: series.clone(),
                    episode,
                    reason: "already processed".into(),
                });
                return Ok(EpisodeExtractionResult::no_op(series.clone(), episode));
            }
            self.purge_episode(series, episode)?;
        } else if force {
            self.purge_episode(series, episode)?;
        }

        let missing = self.missing_predecessors(series, episode)?;
        if !missing.is_empty() {
            return Err(PipelineError::Ordering { episode, missing });
        }
        let doc = preprocess::load_document(self.workspace, series, episode)?;
        if doc.status != DocStatus::Normalized || doc.normalized.is_empty() {
            return Err(PipelineError::NotNormalized(episode));
        }

        let mut cp = match load_checkpoint(self.workspace, series, episode)? {
            Some(cp) if cp.series == *series && cp.episode == episode => cp,
            _ => Checkpoint::fresh(series.clone(), episode),
        };
        sink(&RunEvent::RunStarted {
            series: series.clone(),
            episode,
            resumed_after: (cp.completed_agent > 0).then_some(cp.completed_agent),
        });

        let ctx = AgentContext {
            memory: self.memory,
            gateway: self.gateway,
            embedder: self.embedder,
            config: &self.config,
            doc: &doc,
        };
        let cp_path = checkpoint_path(self.workspace, series, episode);
        for agent in (cp.completed_agent + 1)..=9 {
            *current_agent = Some(agent);
            self.run_agent(agent, &ctx, &mut cp, &cp_path)?;
            cp.completed_agent = agent;
            write_json(&cp_path, &cp)?;
            let last = cp.trace.last().expect("agent pushed a trace entry");
            sink(&RunEvent::AgentCompleted {
                series: series.clone(),
                episode,
                agent,
                name: agent_name(agent).to_string(),
                drafts: last.drafts_out,
                llm_calls: last.fingerprints.len(),
            });
        }
        *current_agent = None;

        let result = finish(&doc, &cp);
        let json = serde_json::to_string(&result).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        write_json(&result_path(self.workspace, series, episode), &result)?;
        self.memory.relational.mark_processed(series, episode, &json)?;
        fs::remove_file(&cp_path).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        sink(&RunEvent::EpisodeCompleted {
            series: series.clone(),
            episode,
            new_arcs: result.new_arcs,
            continued_arcs: result.continued_arcs,
            rejected: result
                .commits
                .iter()
                .filter(|c| matches!(c.outcome, CommitOutcome::Rejected { .. }))
                .count(),
        });
        Ok(result)
    }

    fn run_agent(
        &self,
        agent: u8,
        ctx: &AgentContext<'_>,
        cp: &mut Checkpoint,
        cp_path: &Path,
    ) -> Result<(), PipelineError> {
        let mut trace = TraceEntry::new(agent, cp.drafts.len());
        match agent {
            1 => cp.flagged = agents::agent1_identify_existing(ctx, &mut trace)?,
            2 => {
                let found = agents::agent2_extract_anthology(ctx, &mut cp.next_id, &mut trace)?;
                cp.drafts.extend(found);
            }
            3 => {
                let found = agents::agent3_extract_serial(ctx, &cp.flagged, &mut cp.next_id, &mut trace)?;
                cp.drafts.extend(found);
            }
            4 => cp.drafts = agents::agent4_optimize_season(ctx, std::mem::take(&mut cp.drafts), &mut trace)?,
            5 => cp.drafts = agents::agent5_deduplicate(ctx, std::mem::take(&mut cp.drafts), &mut trace)?,
            6 => {
                cp.drafts = agents::agent6_enhance_details(
                    ctx,
                    std::mem::take(&mut cp.drafts),
                    &mut cp.unresolved_names,
                    &mut trace,
                )?
            }
            7 => cp.drafts = agents::agent7_verify_progressions(ctx, std::mem::take(&mut cp.drafts), &mut trace)?,
            8 => {
                cp.drafts = agents::agent8_verify_roles(
                    ctx,
                    std::mem::take(&mut cp.drafts),
                    &mut cp.unresolved_names,
                    &mut trace,
                )?
            }
            9 => {
                // A resumed Agent 9 continues the partial trace it left behind.
                if let Some(prev) = cp.trace.iter().position(|t| t.agent == 9) {
                    trace = cp.trace.remove(prev);
                }
                if cp.verdicts.is_none() {
                    cp.verdicts = Some(agent9_final_review(ctx, &cp.drafts, &mut trace)?);
                    cp.trace.push(trace.clone());
                    write_json(cp_path, cp)?;
                    cp.trace.pop();
                }
                let verdicts = cp.verdicts.clone().unwrap_or_default();
                for (i, draft) in cp.drafts.clone().iter().enumerate() {
                    if cp.commits.iter().any(|c| c.provisional_id == draft.provisional_id) {
                        continue;
                    }
                    let outcome = match verdicts.get(i) {
                        Some(v) if !v.accept => CommitOutcome::Rejected {
                            reason: format!("final review: {}", v.reason),
                            codes: vec!["REVIEW_REJECTED".into()],
                        },
                        _ => match semantic_commit(ctx, draft, &mut trace) {
                            Ok(o) => o,
                            Err(PipelineError::Memory(e)) if !matches!(e, MemoryError::Embedding(_)) => {
                                trace.notes.push(format!("{}: storage error: {e}", draft.provisional_id));
                                CommitOutcome::Rejected {
                                    reason: e.to_string(),
                                    codes: vec![e.code().to_string()],
                                }
                            }
                            Err(e) => {
                                cp.trace.push(trace);
                                write_json(cp_path, cp)?;
                                return Err(e);
                            }
                        },
                    };
                    cp.commits.push(DraftCommit {
                        provisional_id: draft.provisional_id.clone(),
                        title: draft.title.clone(),
                        outcome,
                    });
                    cp.trace.push(trace.clone());
                    write_json(cp_path, cp)?;
                    cp.trace.pop();
                }
                trace.drafts_out = cp
                    .commits
                    .iter()
                    .filter(|c| !matches!(c.outcome, CommitOutcome::Rejected { .. }))
                    .count();
                cp.trace.push(trace);
                return Ok(());
            }
            _ => unreachable!("agents are numbered 1 to 9"),
        }
        trace.drafts_out = if agent == 1 { cp.flagged.len() } else { cp.drafts.len() };
        cp.trace.push(trace);
        Ok(())
    }

    /// Runs every staged episode of a season in order (or just `only`).
    /// Stops at the first failure.
    pub fn run_season(
        &self,
        series: &SeriesId,
        season: u32,
        only: Option<u32>,
        force: bool,
        sink: &mut dyn FnMut(&RunEvent),
    ) -> Result<Vec<EpisodeExtractionResult>, PipelineError> {
        let episodes: Vec<EpisodeKey> = preprocess::staged_episodes(self.workspace, series)?
            .into_iter()
            .filter(|e| e.season() == season && only.map_or(true, |n| e.episode() == n))
            .collect();
        if let Some(n) = only {
            if episodes.is_empty() {
                let key = EpisodeKey::new(season, n)?;
                return Err(PreprocessError::Staged(format!("no staged document for {key}")).into());
            }
        }
        let mut out = Vec::new();
        for e in episodes {
            out.push(self.run_episode(series, e, force, sink)?);
        }
        sink(&RunEvent::RunCompleted {
            series: series.clone(),
            season,
            episodes: out.len(),
        });
        Ok(out)
    }
}

fn finish(doc: &EpisodeDocument, cp: &Checkpoint) -> EpisodeExtractionResult {
    let mut committed = Vec::new();
    let (mut new_arcs, mut continued) = (0, 0);
    for c in &cp.commits {
        match &c.outcome {
            CommitOutcome::Created { arc_id } => {
                new_arcs += 1;
                committed.push(arc_id.clone());
            }
            CommitOutcome::Linked { arc_id, .. } => {
                continued += 1;
                committed.push(arc_id.clone());
            }
            CommitOutcome::Rejected { .. } => {}
        }
    }
    EpisodeExtractionResult {
        series: doc.series.clone(),
        episode: doc.episode,
        status: RunStatus::Completed,
        committed_arcs: committed,
        new_arcs,
        continued_arcs: continued,
        commits: cp.commits.clone(),
        unresolved_names: cp.unresolved_names.iter().cloned().collect(),
        agent_trace: cp.trace.clone(),
    }
}
