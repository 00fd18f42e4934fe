//! Agents 1–8 of the working-memory workflow. Agent 9 lives with the
//! commit logic in `commit.rs`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::drafts::{ArcDraft, DraftFlag, DraftOrigin, FlaggedArc, RetrievalHit, RetrievalTrace, TraceEntry};
use super::{PipelineConfig, PipelineError};
use crate::gateway::{ids, vars, EmbeddingProvider, Gateway};
use crate::memory::{EpisodeBound, MemoryStore, Query, QueryFilter, TargetKind};
use crate::model::{ArcId, ArcType};
use crate::preprocess::EpisodeDocument;

/// Everything an agent may read.
pub struct AgentContext<'a> {
    pub memory: &'a MemoryStore,
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn EmbeddingProvider,
    pub config: &'a PipelineConfig,
    pub doc: &'a EpisodeDocument,
}

impl AgentContext<'_> {
    fn plot(&self) -> String {
        self.doc.normalized_plot()
    }

    /// Maps names to preferred names through the appellation table.
    /// Unknown names go to `unresolved`; duplicates are dropped.
    fn resolve_names(
        &self,
        names: &[String],
        unresolved: &mut BTreeSet<String>,
    ) -> Result<Vec<String>, PipelineError> {
        let mut out: Vec<String> = Vec::new();
        for n in names {
            match self
                .memory
                .relational
                .find_character_by_appellation(&self.doc.series, n)?
            {
                Some(c) if !out.contains(&c.preferred_name) => out.push(c.preferred_name),
                Some(_) => {}
                None => {
                    unresolved.insert(n.trim().to_string());
                }
            }
        }
        Ok(out)
    }
}

fn numbered_from_zero(lines: &[String]) -> String {
    lines
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i}. {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

// --- Agent 1 -------------------------------------------------------------

#[derive(Deserialize)]
struct ThreadCues {
    threads: Vec<String>,
}

/// Flags stored arcs that may continue in this episode. Retrieval sees only
/// arc summaries of the same series from strictly earlier episodes. Queries
/// are the whole plot, each paragraph, and thread cues the LLM lists.
pub fn agent1_identify_existing(
    ctx: &AgentContext<'_>,
    trace: &mut TraceEntry,
) -> Result<Vec<FlaggedArc>, PipelineError> {
    let filter = QueryFilter {
        series: Some(ctx.doc.series.clone()),
        target_kind: Some(TargetKind::ArcSummary),
        exclude_arc_id: None,
        max_episode: Some(EpisodeBound::Before(ctx.doc.episode)),
    };
    if ctx.memory.vectors.records(&filter).is_empty() {
        trace.notes.push("memory holds no earlier arcs".into());
        return Ok(Vec::new());
    }

    let mut queries = vec![ctx.plot()];
    for chunk in ctx.doc.normalized.chunks(ctx.config.paragraph_sentences.max(1)) {
        queries.push(chunk.join(" "));
    }
    let (cues, c): (ThreadCues, _) =
        ctx.gateway.complete_as(ids::AGENT1_THREAD_CUES, &vars([("plot", ctx.plot())]))?;
    trace.fingerprints.push(c.fingerprint);
    queries.extend(cues.threads.into_iter().filter(|t| !t.trim().is_empty()));

    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for q in queries {
        let hits = ctx.memory.vectors.query_similar(
            Query::Text(&q),
            ctx.config.retrieval_k,
            &filter,
            Some(ctx.embedder),
        )?;
        let mut rt = RetrievalTrace {
            query: q,
            before: ctx.doc.episode,
            hits: Vec::new(),
        };
        for h in hits {
            let Some(arc_id) = h.record.arc_id.clone() else { continue };
            rt.hits.push(RetrievalHit {
                arc_id: arc_id.as_str().to_string(),
                episode: h.record.episode,
                score: h.score,
            });
            let e = best.entry(arc_id.as_str().to_string()).or_insert(f64::NEG_INFINITY);
            if h.score > *e {
                *e = h.score;
            }
        }
        trace.retrievals.push(rt);
    }

    let mut flagged = Vec::new();
    for (arc_id, score) in best {
        if score < ctx.config.theta_flag {
            continue;
        }
        let arc = ctx.memory.relational.load_arc(&ArcId::from_raw(arc_id))?;
        flagged.push(FlaggedArc {
            arc_id: arc.arc_id,
            title: arc.title,
            description: arc.description,
            arc_type: arc.arc_type,
            score,
        });
    }
    flagged.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.arc_id.cmp(&b.arc_id)));
    for f in &flagged {
        trace.notes.push(format!("possibly present: {} ({:.3})", f.arc_id, f.score));
    }
    Ok(flagged)
}

// --- Agent 2 -------------------------------------------------------------

#[derive(Deserialize)]
struct AnthologyArcs {
    arcs: Vec<AnthologyArc>,
}

#[derive(Deserialize)]
struct AnthologyArc {
    title: String,
    description: String,
}

pub fn agent2_extract_anthology(
    ctx: &AgentContext<'_>,
    next_id: &mut usize,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let (r, c): (AnthologyArcs, _) =
        ctx.gateway.complete_as(ids::AGENT2_ANTHOLOGY, &vars([("plot", ctx.plot())]))?;
    trace.fingerprints.push(c.fingerprint);
    Ok(r.arcs
        .into_iter()
        .map(|a| {
            *next_id += 1;
            ArcDraft::new(format!("d{next_id}"), a.title, a.description, ArcType::Anthology, DraftOrigin::Agent2)
        })
        .collect())
}

// --- Agent 3 -------------------------------------------------------------

#[derive(Deserialize)]
struct SerialArcs {
    new_arcs: Vec<SerialArc>,
    validations: Vec<Validation>,
}

#[derive(Deserialize)]
struct SerialArc {
    title: String,
    description: String,
    arc_type: ArcType,
}

#[derive(Deserialize)]
struct Validation {
    arc_id: String,
    present: bool,
    developments: String,
}

pub fn agent3_extract_serial(
    ctx: &AgentContext<'_>,
    flagged: &[FlaggedArc],
    next_id: &mut usize,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let listing = if flagged.is_empty() {
        "(none)".to_string()
    } else {
        flagged
            .iter()
            .map(|f| format!("- [{}] {} ({}): {}", f.arc_id, f.title, f.arc_type, f.description))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (r, c): (SerialArcs, _) = ctx.gateway.complete_as(
        ids::AGENT3_SERIAL,
        &vars([("plot", ctx.plot()), ("flagged", listing)]),
    )?;
    trace.fingerprints.push(c.fingerprint);

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for v in r.validations {
        let Some(f) = flagged.iter().find(|f| f.arc_id.as_str() == v.arc_id) else {
            trace.notes.push(format!("ignored verdict for unflagged arc {}", v.arc_id));
            continue;
        };
        if !seen.insert(v.arc_id.clone()) {
            continue;
        }
        if !v.present {
            trace.notes.push(format!("absent: {}", f.arc_id));
            continue;
        }
        *next_id += 1;
        let mut d = ArcDraft::new(
            format!("d{next_id}"),
            &f.title,
            &f.description,
            f.arc_type,
            DraftOrigin::Agent3Validated,
        );
        d.existing_arc_id = Some(f.arc_id.clone());
        d.flags.insert(DraftFlag::PossiblyPresent);
        if !v.developments.trim().is_empty() {
            d.notes.push(v.developments.trim().to_string());
        }
        out.push(d);
    }
    for a in r.new_arcs {
        if a.arc_type == ArcType::Anthology {
            return Err(PipelineError::Postcondition {
                agent: 3,
                message: format!("new serial arc {:?} typed Anthology", a.title),
            });
        }
        *next_id += 1;
        out.push(ArcDraft::new(format!("d{next_id}"), a.title, a.description, a.arc_type, DraftOrigin::Agent3New));
    }
    Ok(out)
}

// --- Agent 4 -------------------------------------------------------------

#[derive(Deserialize)]
struct Overlap {
    same_storyline: bool,
    merged: Option<MergedText>,
    #[allow(dead_code)]
    reason: String,
}

#[derive(Deserialize)]
struct MergedText {
    title: String,
    description: String,
}

const STRICT_SCRUTINY: &str = "One of them continues a storyline already stored from earlier episodes, so apply a stricter standard: answer true only if they are unmistakably the same storyline.";

fn union_into(target: &mut Vec<String>, extra: &[String]) {
    for x in extra {
        if !target.contains(x) {
            target.push(x.clone());
        }
    }
}

/// Folds `b` into `a`. A stored identity wins over new text.
fn merge_drafts(a: &mut ArcDraft, b: ArcDraft, text: Option<MergedText>) {
    match (&a.existing_arc_id, &b.existing_arc_id) {
        (Some(_), _) => {}
        (None, Some(_)) => {
            a.existing_arc_id = b.existing_arc_id.clone();
            a.title = b.title.clone();
            a.description = b.description.clone();
            a.arc_type = b.arc_type;
        }
        (None, None) => {
            if let Some(t) = text {
                a.title = t.title.trim().to_string();
                a.description = t.description.trim().to_string();
            }
        }
    }
    union_into(&mut a.main_characters, &b.main_characters);
    union_into(&mut a.interfering_characters, &b.interfering_characters);
    union_into(&mut a.notes, &b.notes);
    a.flags.extend(b.flags);
    a.origin = DraftOrigin::Merged;
}

/// Pairwise overlap check over serial drafts; anthology drafts pass through.
pub fn agent4_optimize_season(
    ctx: &AgentContext<'_>,
    drafts: Vec<ArcDraft>,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let mut slots: Vec<Option<ArcDraft>> = drafts.into_iter().map(Some).collect();
    let serial: Vec<usize> = (0..slots.len())
        .filter(|&i| slots[i].as_ref().is_some_and(|d| d.arc_type.is_serial()))
        .collect();
    for (pos, &i) in serial.iter().enumerate() {
        for &j in &serial[pos + 1..] {
            let (Some(a), Some(b)) = (&slots[i], &slots[j]) else { continue };
            if let (Some(x), Some(y)) = (&a.existing_arc_id, &b.existing_arc_id) {
                if x != y {
                    continue;
                }
            }
            let strict = a.flags.contains(&DraftFlag::PossiblyPresent)
                || b.flags.contains(&DraftFlag::PossiblyPresent);
            let v = vars([
                ("arc_a", a.brief()),
                ("arc_b", b.brief()),
                ("scrutiny", if strict { STRICT_SCRUTINY.to_string() } else { String::new() }),
            ]);
            let (r, c): (Overlap, _) = ctx.gateway.complete_as(ids::AGENT4_OVERLAP, &v)?;
            trace.fingerprints.push(c.fingerprint);
            if !r.same_storyline {
                continue;
            }
            let b = slots[j].take().expect("checked above");
            let a = slots[i].as_mut().expect("checked above");
            trace
                .notes
                .push(format!("merged {} into {}", b.provisional_id, a.provisional_id));
            merge_drafts(a, b, r.merged);
        }
    }
    Ok(slots.into_iter().flatten().collect())
}

// --- Agent 5 -------------------------------------------------------------

#[derive(Deserialize)]
struct Duplicates {
    duplicates: Vec<Duplicate>,
}

#[derive(Deserialize)]
struct Duplicate {
    keep: usize,
    drop: usize,
    arc_type: ArcType,
    #[allow(dead_code)]
    reason: String,
}

fn listing(drafts: &[ArcDraft]) -> String {
    drafts
        .iter()
        .enumerate()
        .map(|(i, d)| format!("[{i}] ({}) {}: {}", d.arc_type, d.title, d.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Resolves cross-type duplicates to a single draft. The surviving type
/// must be one of the pair's types.
pub fn agent5_deduplicate(
    ctx: &AgentContext<'_>,
    drafts: Vec<ArcDraft>,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    if drafts.len() < 2 {
        return Ok(drafts);
    }
    let (r, c): (Duplicates, _) =
        ctx.gateway.complete_as(ids::AGENT5_DEDUP, &vars([("drafts", listing(&drafts))]))?;
    trace.fingerprints.push(c.fingerprint);
    let mut slots: Vec<Option<ArcDraft>> = drafts.into_iter().map(Some).collect();
    for d in r.duplicates {
        if d.keep == d.drop || d.keep >= slots.len() || d.drop >= slots.len() {
            trace.notes.push(format!("ignored pair ({}, {})", d.keep, d.drop));
            continue;
        }
        let (Some(keep), Some(drop)) = (&slots[d.keep], &slots[d.drop]) else {
            trace.notes.push(format!("pair ({}, {}) already resolved", d.keep, d.drop));
            continue;
        };
        if d.arc_type != keep.arc_type && d.arc_type != drop.arc_type {
            return Err(PipelineError::Postcondition {
                agent: 5,
                message: format!(
                    "survivor type {} is neither {} nor {}",
                    d.arc_type, keep.arc_type, drop.arc_type
                ),
            });
        }
        if keep.existing_arc_id.is_some() && d.arc_type != keep.arc_type {
            return Err(PipelineError::Postcondition {
                agent: 5,
                message: format!("cannot retype stored arc {:?}", keep.title),
            });
        }
        let dropped = slots[d.drop].take().expect("checked above");
        let kept = slots[d.keep].as_mut().expect("checked above");
        trace.notes.push(format!(
            "dropped {} as duplicate of {}; type {}",
            dropped.provisional_id, kept.provisional_id, d.arc_type
        ));
        kept.arc_type = d.arc_type;
        kept.flags.insert(DraftFlag::NeedsDisambiguation);
        if kept.existing_arc_id.is_none() {
            kept.existing_arc_id = dropped.existing_arc_id.clone();
        }
        union_into(&mut kept.notes, &dropped.notes);
    }
    Ok(slots.into_iter().flatten().collect())
}

// --- Agent 6 -------------------------------------------------------------

#[derive(Deserialize)]
struct Enhanced {
    main_characters: Vec<String>,
    interfering_characters: Vec<String>,
    utterances: Vec<String>,
}

pub(crate) fn known_characters(ctx: &AgentContext<'_>) -> Result<String, PipelineError> {
    let names: Vec<String> = ctx
        .memory
        .relational
        .list_characters(&ctx.doc.series)?
        .into_iter()
        .map(|c| c.preferred_name)
        .collect();
    Ok(if names.is_empty() { "(none)".into() } else { names.join("; ") })
}

pub fn agent6_enhance_details(
    ctx: &AgentContext<'_>,
    drafts: Vec<ArcDraft>,
    unresolved: &mut BTreeSet<String>,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let characters = known_characters(ctx)?;
    let mut out = Vec::with_capacity(drafts.len());
    for mut d in drafts {
        let v = vars([
            ("plot", ctx.plot()),
            ("title", d.title.clone()),
            ("description", d.description.clone()),
            ("arc_type", d.arc_type.to_string()),
            ("characters", characters.clone()),
            ("notes", if d.notes.is_empty() { "(none)".into() } else { d.notes.join(" ") }),
        ]);
        let (r, c): (Enhanced, _) = ctx.gateway.complete_as(ids::AGENT6_ENHANCE, &v)?;
        trace.fingerprints.push(c.fingerprint);
        d.main_characters = ctx.resolve_names(&r.main_characters, unresolved)?;
        let mut interfering = ctx.resolve_names(&r.interfering_characters, unresolved)?;
        interfering.retain(|n| !d.main_characters.contains(n));
        d.interfering_characters = interfering;
        d.progression_content = r
            .utterances
            .into_iter()
            .map(|u| u.trim().to_string())
            .filter(|u| !u.is_empty())
            .collect();
        if d.main_characters.is_empty() {
            return Err(PipelineError::Postcondition {
                agent: 6,
                message: format!("draft {:?} has no resolvable main character", d.title),
            });
        }
        if d.progression_content.is_empty() {
            return Err(PipelineError::Postcondition {
                agent: 6,
                message: format!("draft {:?} has no progression content", d.title),
            });
        }
        out.push(d);
    }
    Ok(out)
}

// --- Agent 7 -------------------------------------------------------------

#[derive(Deserialize)]
struct Verified {
    keep: Vec<usize>,
}

pub fn agent7_verify_progressions(
    ctx: &AgentContext<'_>,
    drafts: Vec<ArcDraft>,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let mut out = Vec::with_capacity(drafts.len());
    for mut d in drafts {
        let v = vars([
            ("title", d.title.clone()),
            ("description", d.description.clone()),
            ("utterances", numbered_from_zero(&d.progression_content)),
            ("plot", ctx.plot()),
        ]);
        let (r, c): (Verified, _) = ctx.gateway.complete_as(ids::AGENT7_VERIFY, &v)?;
        trace.fingerprints.push(c.fingerprint);
        let keep: BTreeSet<usize> = r.keep.into_iter().filter(|&i| i < d.progression_content.len()).collect();
        let before = d.progression_content.len();
        d.progression_content = d
            .progression_content
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, u)| u)
            .collect();
        if d.progression_content.is_empty() {
            trace.notes.push(format!("VERIFIER_EMPTIED: {} {:?}", d.provisional_id, d.title));
            continue;
        }
        if d.progression_content.len() < before {
            trace.notes.push(format!(
                "{}: removed {} utterance(s)",
                d.provisional_id,
                before - d.progression_content.len()
            ));
        }
        out.push(d);
    }
    Ok(out)
}

// --- Agent 8 -------------------------------------------------------------

#[derive(Deserialize)]
struct Roles {
    main_characters: Vec<String>,
    interfering_characters: Vec<String>,
}

pub fn agent8_verify_roles(
    ctx: &AgentContext<'_>,
    drafts: Vec<ArcDraft>,
    unresolved: &mut BTreeSet<String>,
    trace: &mut TraceEntry,
) -> Result<Vec<ArcDraft>, PipelineError> {
    let mut out = Vec::with_capacity(drafts.len());
    for mut d in drafts {
        let v = vars([
            ("title", d.title.clone()),
            ("description", d.description.clone()),
            ("utterances", numbered_from_zero(&d.progression_content)),
            ("main", d.main_characters.join("; ")),
            ("interfering", if d.interfering_characters.is_empty() { "(none)".into() } else { d.interfering_characters.join("; ") }),
        ]);
        let (r, c): (Roles, _) = ctx.gateway.complete_as(ids::AGENT8_ROLES, &v)?;
        trace.fingerprints.push(c.fingerprint);
        let main = ctx.resolve_names(&r.main_characters, unresolved)?;
        let mut interfering = ctx.resolve_names(&r.interfering_characters, unresolved)?;
        let before = interfering.len();
        interfering.retain(|n| !main.contains(n));
        if interfering.len() < before {
            trace
                .notes
                .push(format!("{}: removed main characters from interfering", d.provisional_id));
        }
        if main.is_empty() {
            return Err(PipelineError::Postcondition {
                agent: 8,
                message: format!("draft {:?} left without main characters", d.title),
            });
        }
        for n in &d.main_characters {
            if interfering.contains(n) {
                trace.notes.push(format!("{}: {n} moved to interfering", d.provisional_id));
            }
        }
        d.main_characters = main;
        d.interfering_characters = interfering;
        out.push(d);
    }
    Ok(out)
}
