//! Agent 9 and the semantic commit that turns drafts into stored arcs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::agents::AgentContext;
use super::drafts::{ArcDraft, CommitOutcome, TraceEntry};
use super::PipelineError;
use crate::gateway::{ids, vars};
use crate::memory::{EpisodeBound, MemoryError, Query, QueryFilter, TargetKind};
use crate::model::{
    normalize_appellation, summary_text, ArcId, CharacterId, NarrativeArc, Progression,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub accept: bool,
    pub reason: String,
}

#[derive(Deserialize)]
struct Verdicts {
    verdicts: Vec<Verdict>,
}

fn full_listing(drafts: &[ArcDraft]) -> String {
    drafts
        .iter()
        .enumerate()
        .map(|(i, d)| {
            format!(
                "[{i}] ({}) {}: {}\nMain: {}\nInterfering: {}\nProgression:\n{}",
                d.arc_type,
                d.title,
                d.description,
                d.main_characters.join("; "),
                if d.interfering_characters.is_empty() { "(none)".into() } else { d.interfering_characters.join("; ") },
                d.progression_content
                    .iter()
                    .map(|u| format!("- {u}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Final consistency pass: one accept/reject verdict per draft. A draft the
/// reviewer does not mention is accepted. The reviewer never merges.
pub fn agent9_final_review(
    ctx: &AgentContext<'_>,
    drafts: &[ArcDraft],
    trace: &mut TraceEntry,
) -> Result<Vec<Verdict>, PipelineError> {
    if drafts.is_empty() {
        return Ok(Vec::new());
    }
    let (r, c): (Verdicts, _) =
        ctx.gateway.complete_as(ids::AGENT9_FINAL_REVIEW, &vars([("drafts", full_listing(drafts))]))?;
    trace.fingerprints.push(c.fingerprint);
    let mut out: Vec<Verdict> = (0..drafts.len())
        .map(|index| Verdict {
            index,
            accept: true,
            reason: String::new(),
        })
        .collect();
    let mut seen = BTreeSet::new();
    for v in r.verdicts {
        if v.index < drafts.len() && seen.insert(v.index) {
            let i = v.index;
            out[i] = v;
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SameStoryline {
    same_storyline: bool,
    #[allow(dead_code)]
    reason: String,
}

fn character_ids(ctx: &AgentContext<'_>, names: &[String]) -> Result<Vec<CharacterId>, PipelineError> {
    let mut out = Vec::new();
    for n in names {
        let c = ctx
            .memory
            .relational
            .find_character_by_appellation(&ctx.doc.series, n)?
            .ok_or_else(|| PipelineError::Postcondition {
                agent: 9,
                message: format!("character {n:?} vanished from the store"),
            })?;
        if !out.contains(&c.character_id) {
            out.push(c.character_id);
        }
    }
    Ok(out)
}

fn progression_text(arc: &NarrativeArc) -> String {
    let lines: Vec<String> = arc
        .progressions
        .iter()
        .map(|p| format!("{}: {}", p.episode, p.content.join(" ")))
        .collect();
    if lines.is_empty() {
        "(none)".into()
    } else {
        lines.join("\n")
    }
}

/// Saves `arc`, turning validation failures into a rejection rather than an
/// error. Storage failures leave the stores as they were before the call.
fn try_commit(ctx: &AgentContext<'_>, arc: &NarrativeArc) -> Result<Option<CommitOutcome>, PipelineError> {
    match ctx.memory.commit_arc(arc, ctx.embedder) {
        Ok(()) => Ok(None),
        Err(MemoryError::Invalid(violations)) => Ok(Some(CommitOutcome::Rejected {
            reason: "arc fails validation".into(),
            codes: violations.iter().map(|v| v.code.as_str().to_string()).collect(),
        })),
        Err(e) => Err(e.into()),
    }
}

fn link(
    ctx: &AgentContext<'_>,
    draft: &ArcDraft,
    mut arc: NarrativeArc,
    score: Option<f64>,
) -> Result<CommitOutcome, PipelineError> {
    let episode = ctx.doc.episode;
    if arc.progression_for(episode).is_some() {
        return Ok(CommitOutcome::Rejected {
            reason: format!("arc {} already has a progression in {episode}", arc.arc_id),
            codes: vec!["DUPLICATE_EPISODE".into()],
        });
    }
    for id in character_ids(ctx, &draft.main_characters)? {
        if !arc.main_characters.contains(&id) {
            arc.main_characters.push(id);
        }
    }
    let mut interfering = character_ids(ctx, &draft.interfering_characters)?;
    interfering.retain(|c| !arc.main_characters.contains(c));
    arc.progressions.push(Progression::new(
        arc.arc_id.clone(),
        arc.series.clone(),
        episode,
        draft.progression_content.clone(),
        interfering,
    )?);
    arc.sort_progressions();
    Ok(try_commit(ctx, &arc)?.unwrap_or(CommitOutcome::Linked {
        arc_id: arc.arc_id,
        score,
    }))
}

fn create(ctx: &AgentContext<'_>, draft: &ArcDraft) -> Result<CommitOutcome, PipelineError> {
    let series = &ctx.doc.series;
    let base = format!("{}/{}", ctx.doc.episode, normalize_appellation(&draft.title));
    let mut arc_id = ArcId::derive(series, &base)?;
    let mut n = 1;
    while ctx.memory.relational.find_arc(&arc_id)?.is_some() {
        n += 1;
        arc_id = ArcId::derive(series, &format!("{base}#{n}"))?;
    }
    let main = character_ids(ctx, &draft.main_characters)?;
    let mut interfering = character_ids(ctx, &draft.interfering_characters)?;
    interfering.retain(|c| !main.contains(c));
    let arc = NarrativeArc {
        arc_id: arc_id.clone(),
        series: series.clone(),
        title: draft.title.clone(),
        description: draft.description.clone(),
        arc_type: draft.arc_type,
        main_characters: main,
        progressions: vec![Progression::new(
            arc_id.clone(),
            series.clone(),
            ctx.doc.episode,
            draft.progression_content.clone(),
            interfering,
        )?],
    };
    Ok(try_commit(ctx, &arc)?.unwrap_or(CommitOutcome::Created { arc_id }))
}

/// Links `draft` to a stored arc or creates a new one. A draft that already
/// carries a stored identity links straight to it. Otherwise candidates are
/// same-series arc summaries scoring at least `theta_dedup`, asked in
/// descending score order whether they tell the same story; the first yes
/// links. Similarity alone never links.
pub fn semantic_commit(
    ctx: &AgentContext<'_>,
    draft: &ArcDraft,
    trace: &mut TraceEntry,
) -> Result<CommitOutcome, PipelineError> {
    if let Some(id) = &draft.existing_arc_id {
        if let Some(arc) = ctx.memory.relational.find_arc(id)? {
            return link(ctx, draft, arc, None);
        }
        trace
            .notes
            .push(format!("{}: stored arc {id} is gone; treating as new", draft.provisional_id));
    }

    let episode = ctx.doc.episode;
    let filter = QueryFilter {
        series: Some(ctx.doc.series.clone()),
        target_kind: Some(TargetKind::ArcSummary),
        exclude_arc_id: None,
        max_episode: Some(EpisodeBound::UpTo(episode)),
    };
    let text = summary_text(&draft.title, &draft.description);
    let hits = ctx.memory.vectors.query_similar(
        Query::Text(&text),
        ctx.config.retrieval_k,
        &filter,
        Some(ctx.embedder),
    )?;
    for hit in hits {
        if hit.score < ctx.config.theta_dedup {
            break;
        }
        let Some(arc_id) = &hit.record.arc_id else { continue };
        let Some(candidate) = ctx.memory.relational.find_arc(arc_id)? else { continue };
        // Written earlier in this same run; not a continuation.
        if candidate.progression_for(episode).is_some() {
            continue;
        }
        let v = vars([
            ("draft_title", draft.title.clone()),
            ("draft_description", draft.description.clone()),
            ("candidate_title", candidate.title.clone()),
            ("candidate_description", candidate.description.clone()),
            ("candidate_progressions", progression_text(&candidate)),
        ]);
        let (r, c): (SameStoryline, _) = ctx.gateway.complete_as(ids::SAME_STORYLINE, &v)?;
        trace.fingerprints.push(c.fingerprint);
        if r.same_storyline {
            trace.notes.push(format!(
                "{}: same storyline as {} ({:.3})",
                draft.provisional_id, candidate.arc_id, hit.score
            ));
            return link(ctx, draft, candidate, Some(hit.score));
        }
        trace.notes.push(format!(
            "{}: similar to {} ({:.3}) but a different storyline",
            draft.provisional_id, candidate.arc_id, hit.score
        ));
    }
    create(ctx, draft)
}
