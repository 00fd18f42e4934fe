//! Character mention extraction: a pluggable NER provider produces raw
//! person mentions, then an LLM pass groups variants and drops non-people.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::normalize::scan_names;
use super::{DocStatus, EpisodeDocument, PreprocessError};
use crate::gateway::{ids, vars, Gateway};
use crate::model::normalize_appellation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionSource {
    Ner,
    LlmRefinement,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionCandidate {
    pub surface: String,
    pub sentence_index: usize,
    pub source: MentionSource,
}

/// One character as the episode sees it: every surface form used for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtoEntity {
    pub surfaces: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityExtraction {
    pub candidates: Vec<MentionCandidate>,
    pub entities: Vec<ProtoEntity>,
    pub rejected: Vec<String>,
}

pub trait NerProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Person mentions as (surface, sentence index).
    fn mentions(
        &self,
        sentences: &[String],
        gateway: Option<&Gateway>,
    ) -> Result<Vec<(String, usize)>, PreprocessError>;
}

/// Words that start a capitalized run without being part of a name.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "but", "or", "so", "then", "when", "while", "after", "before",
    "later", "meanwhile", "at", "in", "on", "by", "for", "with", "from", "to", "as", "if",
    "that", "this", "these", "those", "there", "here", "it", "its", "he", "she", "his", "her",
    "they", "their", "we", "i", "you", "one", "both", "each", "every", "no", "not", "all",
    "during", "back", "once", "still", "soon", "finally", "eventually", "however", "despite",
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "today",
    "tonight", "tomorrow", "yesterday",
];

const HONORIFICS: &[&str] = &["Dr.", "Mr.", "Mrs.", "Ms.", "Prof."];

/// Offline heuristic: runs of capitalized words, optionally led by an
/// honorific. A possessive `'s` is dropped. Leading stopwords are skipped.
#[derive(Debug, Clone, Default)]
pub struct CapitalizationNer;

impl CapitalizationNer {
    fn sentence_mentions(sentence: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, out: &mut Vec<String>| {
            while run
                .first()
                .is_some_and(|w| STOPWORDS.contains(&w.to_lowercase().as_str()))
            {
                run.remove(0);
            }
            let bare_honorific = run.len() == 1 && HONORIFICS.contains(&run[0].as_str());
            if !run.is_empty() && !bare_honorific {
                out.push(run.join(" "));
            }
            run.clear();
        };
        for token in sentence.split_whitespace() {
            if HONORIFICS.contains(&token) {
                flush(&mut run, &mut out);
                run.push(token.to_string());
                continue;
            }
            let (word, ends_run) = trim_token(token);
            let capitalized = word.chars().next().is_some_and(char::is_uppercase)
                && word.chars().all(|c| c.is_alphabetic() || c == '-' || c == '\'');
            if capitalized {
                run.push(word.to_string());
                if ends_run {
                    flush(&mut run, &mut out);
                }
            } else {
                flush(&mut run, &mut out);
            }
        }
        flush(&mut run, &mut out);
        out
    }
}

/// Strips punctuation and a possessive from a token. The flag says whether
/// trailing punctuation (or the possessive) ends the name run.
fn trim_token(token: &str) -> (&str, bool) {
    let trimmed = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    let core = trimmed.trim_end_matches(|c: char| !c.is_alphanumeric());
    let mut ends = core.len() != trimmed.len();
    let core = match core.strip_suffix("'s").or_else(|| core.strip_suffix("’s")) {
        Some(c) => {
            ends = true;
            c
        }
        None => core,
    };
    (core, ends)
}

impl NerProvider for CapitalizationNer {
    fn name(&self) -> &str {
        "capitalization"
    }

    fn mentions(
        &self,
        sentences: &[String],
        _gateway: Option<&Gateway>,
    ) -> Result<Vec<(String, usize)>, PreprocessError> {
        Ok(sentences
            .iter()
            .enumerate()
            .flat_map(|(i, s)| Self::sentence_mentions(s).into_iter().map(move |m| (m, i)))
            .collect())
    }
}

/// Asks the LLM for the characters directly, then locates their surfaces
/// in the text.
#[derive(Debug, Clone, Default)]
pub struct LlmNer;

impl NerProvider for LlmNer {
    fn name(&self) -> &str {
        "llm"
    }

    fn mentions(
        &self,
        sentences: &[String],
        gateway: Option<&Gateway>,
    ) -> Result<Vec<(String, usize)>, PreprocessError> {
        let gateway = gateway.ok_or(crate::gateway::GatewayError::Unavailable)?;
        let refined = refine(gateway, &[], sentences)?;
        let surfaces: BTreeSet<String> = refined
            .characters
            .into_iter()
            .flat_map(|c| c.surfaces)
            .collect();
        Ok(locate(sentences, &surfaces))
    }
}

#[derive(Deserialize)]
struct RefinedCharacter {
    preferred: String,
    surfaces: Vec<String>,
}

#[derive(Deserialize)]
struct Refined {
    characters: Vec<RefinedCharacter>,
    rejected: Vec<String>,
}

impl Refined {
    fn normalized(self) -> Vec<BTreeSet<String>> {
        self.characters
            .into_iter()
            .map(|c| {
                std::iter::once(c.preferred)
                    .chain(c.surfaces)
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .collect()
    }
}

fn refine(gateway: &Gateway, candidates: &[String], sentences: &[String]) -> Result<Refined, PreprocessError> {
    let listed = if candidates.is_empty() {
        "(none)".to_string()
    } else {
        candidates.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n")
    };
    let v = vars([("candidates", listed), ("plot", sentences.join(" "))]);
    let (r, _) = gateway.complete_as(ids::REFINE_ENTITIES, &v)?;
    Ok(r)
}

/// Every word-bounded occurrence of the given surfaces, longest first.
fn locate(sentences: &[String], surfaces: &BTreeSet<String>) -> Vec<(String, usize)> {
    let surfaces: Vec<&str> = surfaces.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        for m in scan_names(s, &surfaces) {
            out.push((surfaces[m.surface].to_string(), i));
        }
    }
    out
}

/// Runs NER over the resolved sentences and, when a gateway is given,
/// refines the result with the LLM.
pub fn extract_entities(
    doc: &EpisodeDocument,
    ner: &dyn NerProvider,
    gateway: Option<&Gateway>,
) -> Result<EntityExtraction, PreprocessError> {
    doc.require(DocStatus::Resolved)?;
    let raw = ner.mentions(&doc.resolved, gateway)?;
    let mut candidates: Vec<MentionCandidate> = raw
        .into_iter()
        .map(|(surface, sentence_index)| MentionCandidate {
            surface,
            sentence_index,
            source: MentionSource::Ner,
        })
        .collect();
    let distinct: BTreeSet<String> = candidates.iter().map(|c| c.surface.clone()).collect();

    let Some(gateway) = gateway else {
        let entities = distinct
            .into_iter()
            .map(|s| ProtoEntity {
                surfaces: BTreeSet::from([s]),
            })
            .collect();
        return Ok(EntityExtraction {
            candidates,
            entities,
            rejected: Vec::new(),
        });
    };

    let distinct: Vec<String> = distinct.into_iter().collect();
    let refined = refine(gateway, &distinct, &doc.resolved)?;
    let mut rejected: Vec<String> = refined.rejected.iter().map(|s| s.trim().to_string()).collect();
    rejected.sort();
    rejected.dedup();
    let groups = refined.normalized();

    // Keep only surfaces that actually occur in the text.
    let mut entities = Vec::new();
    let mut kept_surfaces: BTreeMap<String, usize> = BTreeMap::new();
    let occurring: BTreeSet<String> = locate(
        &doc.resolved,
        &groups.iter().flatten().cloned().collect(),
    )
    .into_iter()
    .map(|(s, _)| s)
    .collect();
    for g in groups {
        let surfaces: BTreeSet<String> = g.into_iter().filter(|s| occurring.contains(s)).collect();
        if surfaces.is_empty() {
            continue;
        }
        for s in &surfaces {
            kept_surfaces.insert(s.clone(), entities.len());
        }
        entities.push(ProtoEntity { surfaces });
    }

    let rejected_norm: BTreeSet<String> = rejected.iter().map(|s| normalize_appellation(s)).collect();
    candidates.retain(|c| {
        kept_surfaces.contains_key(&c.surface) && !rejected_norm.contains(&normalize_appellation(&c.surface))
    });
    // Mentions the tagger missed but the refinement named.
    let seen: BTreeSet<(String, usize)> = candidates
        .iter()
        .map(|c| (c.surface.clone(), c.sentence_index))
        .collect();
    let all_surfaces: BTreeSet<String> = kept_surfaces.keys().cloned().collect();
    for (surface, i) in locate(&doc.resolved, &all_surfaces) {
        if !seen.contains(&(surface.clone(), i)) {
            candidates.push(MentionCandidate {
                surface,
                sentence_index: i,
                source: MentionSource::LlmRefinement,
            });
        }
    }
    candidates.sort_by(|a, b| {
        a.sentence_index
            .cmp(&b.sentence_index)
            .then(a.surface.cmp(&b.surface))
            .then(a.source.cmp(&b.source))
    });
    Ok(EntityExtraction {
        candidates,
        entities,
        rejected,
    })
}
