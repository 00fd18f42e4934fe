//! Character normalization: map proto-entities onto stored characters,
//! rewrite the plot with preferred names, and flag likely duplicates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::entities::EntityExtraction;
use super::{DocStatus, EpisodeDocument, PreprocessError};
use crate::memory::similarity::jaccard_similarity;
use crate::memory::RelationalStore;
use crate::model::{normalize_appellation, Character, CharacterId, SeriesId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NameMatch {
    pub start: usize,
    pub end: usize,
    pub surface: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Left-to-right scan for word-bounded, case-sensitive occurrences of
/// `surfaces`. At each position the longest matching surface wins and the
/// scan resumes after it, so matches never overlap.
pub(crate) fn scan_names(text: &str, surfaces: &[&str]) -> Vec<NameMatch> {
    let mut order: Vec<usize> = (0..surfaces.len()).filter(|&i| !surfaces[i].is_empty()).collect();
    order.sort_by(|&a, &b| surfaces[b].len().cmp(&surfaces[a].len()).then(surfaces[a].cmp(surfaces[b])));
    let mut out = Vec::new();
    let mut pos = 0;
    let mut prev: Option<char> = None;
    while pos < text.len() {
        let rest = &text[pos..];
        let at_word_start = !prev.is_some_and(is_word_char);
        if at_word_start {
            let hit = order.iter().copied().find(|&i| {
                rest.starts_with(surfaces[i])
                    && !rest[surfaces[i].len()..].chars().next().is_some_and(is_word_char)
            });
            if let Some(i) = hit {
                let end = pos + surfaces[i].len();
                out.push(NameMatch {
                    start: pos,
                    end,
                    surface: i,
                });
                prev = surfaces[i].chars().last();
                pos = end;
                continue;
            }
        }
        let c = rest.chars().next().expect("non-empty");
        prev = Some(c);
        pos += c.len_utf8();
    }
    out
}

/// Result of mapping an episode's proto-entities onto the character store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub surface_map: BTreeMap<String, CharacterId>,
    pub preferred_names: BTreeMap<CharacterId, String>,
    pub created: Vec<CharacterId>,
    pub extended: Vec<CharacterId>,
}

impl Normalization {
    /// Surface → preferred name, as used by [`substitute_names`].
    pub fn name_map(&self) -> BTreeMap<String, String> {
        self.surface_map
            .iter()
            .map(|(s, id)| (s.clone(), self.preferred_names[id].clone()))
            .collect()
    }
}

/// Longest surface, ties broken by the lexicographically smaller one.
fn pick_preferred(surfaces: &BTreeSet<String>) -> String {
    surfaces
        .iter()
        .fold(None::<&String>, |best, s| match best {
            Some(b) if b.chars().count() >= s.chars().count() => Some(b),
            _ => Some(s),
        })
        .cloned()
        .unwrap_or_default()
}

/// Matches every proto-entity to an existing character (any appellation,
/// case-insensitive) or creates one, extending appellation sets. All
/// writes happen in one transaction. Callers serialize runs per series.
pub fn normalize_characters(
    extraction: &EntityExtraction,
    store: &RelationalStore,
    series: &SeriesId,
) -> Result<Normalization, PreprocessError> {
    // A surface may belong to only one proto-entity.
    let mut claimed: BTreeMap<String, usize> = BTreeMap::new();
    for (i, e) in extraction.entities.iter().enumerate() {
        for s in &e.surfaces {
            if let Some(&j) = claimed.get(&normalize_appellation(s)) {
                if j != i {
                    return Err(PreprocessError::Conflict(format!(
                        "surface {s:?} claimed by {:?} and {:?}",
                        extraction.entities[j].surfaces, e.surfaces
                    )));
                }
            }
            claimed.insert(normalize_appellation(s), i);
        }
    }

    let mut out = Normalization::default();
    let mut touched: BTreeMap<CharacterId, Character> = BTreeMap::new();
    for e in &extraction.entities {
        if e.surfaces.is_empty() {
            continue;
        }
        let mut matches: BTreeMap<CharacterId, Character> = BTreeMap::new();
        for s in &e.surfaces {
            if let Some(c) = store.find_character_by_appellation(series, s)? {
                matches.insert(c.character_id.clone(), c);
            }
        }
        let character = match matches.len() {
            0 => {
                let preferred = pick_preferred(&e.surfaces);
                let id = CharacterId::derive(series, &normalize_appellation(&preferred))
                    .map_err(|err| PreprocessError::Conflict(err.to_string()))?;
                if let Some(existing) = touched.get(&id) {
                    return Err(PreprocessError::Conflict(format!(
                        "proto-entities {:?} and {:?} resolve to one new character",
                        existing.appellations, e.surfaces
                    )));
                }
                out.created.push(id.clone());
                Character::new(id, series.clone(), preferred, e.surfaces.iter().cloned())
            }
            1 => {
                let (id, stored) = matches.into_iter().next().expect("one match");
                let mut c = touched.remove(&id).unwrap_or(stored);
                let mut grew = false;
                for s in &e.surfaces {
                    grew |= c.add_appellation(s);
                }
                if grew && !out.created.contains(&id) && !out.extended.contains(&id) {
                    out.extended.push(id);
                }
                c
            }
            _ => {
                return Err(PreprocessError::Conflict(format!(
                    "surfaces {:?} match several characters: {:?}",
                    e.surfaces,
                    matches.values().map(|c| c.preferred_name.as_str()).collect::<Vec<_>>()
                )))
            }
        };
        for s in &e.surfaces {
            out.surface_map.insert(s.clone(), character.character_id.clone());
        }
        out.preferred_names
            .insert(character.character_id.clone(), character.preferred_name.clone());
        touched.insert(character.character_id.clone(), character);
    }
    let to_save: Vec<Character> = touched.into_values().collect();
    store.save_characters(&to_save)?;
    Ok(out)
}

/// Rewrites resolved sentences, replacing each surface with its preferred
/// name. Preferred names already in the text are left alone.
pub fn substitute_names(
    mut doc: EpisodeDocument,
    normalization: &Normalization,
) -> Result<EpisodeDocument, PreprocessError> {
    doc.require(DocStatus::Resolved)?;
    let names = normalization.name_map();
    let (keys, replacements) = replacement_table(&names);
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    doc.normalized = doc
        .resolved
        .iter()
        .map(|s| {
            let mut out = String::with_capacity(s.len());
            let mut last = 0;
            for m in scan_names(s, &key_refs) {
                out.push_str(&s[last..m.start]);
                out.push_str(&replacements[m.surface]);
                last = m.end;
            }
            out.push_str(&s[last..]);
            out
        })
        .collect();
    doc.surface_map = normalization.surface_map.clone();
    doc.status = DocStatus::Normalized;
    Ok(doc)
}

/// Surfaces plus every preferred name (mapped to itself), so a full name
/// already in the text is consumed whole rather than having a shorter
/// surface inside it replaced.
fn replacement_table(names: &BTreeMap<String, String>) -> (Vec<String>, Vec<String>) {
    let mut table: BTreeMap<String, String> = names.clone();
    for preferred in names.values() {
        table.entry(preferred.clone()).or_insert_with(|| preferred.clone());
    }
    table.into_iter().unzip()
}

/// Surfaces that still occur in `text` outside of preferred-name
/// occurrences. Empty after a correct substitution.
pub fn find_residual_surfaces(text: &str, names: &BTreeMap<String, String>) -> Vec<String> {
    let preferred: BTreeSet<&String> = names.values().collect();
    let (keys, _) = replacement_table(names);
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    scan_names(text, &key_refs)
        .into_iter()
        .map(|m| keys[m.surface].clone())
        .filter(|k| !preferred.contains(k))
        .collect()
}

const HONORIFIC_TOKENS: &[&str] = &["dr", "mr", "mrs", "ms"];

/// Lowercased alphanumeric tokens of a name, honorifics dropped.
pub fn name_tokens<'a>(names: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    names
        .into_iter()
        .flat_map(|n| {
            n.to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty() && !HONORIFIC_TOKENS.contains(t))
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSuggestion {
    pub first: CharacterId,
    pub second: CharacterId,
    pub score: f64,
}

/// Character pairs whose appellation token sets have Jaccard similarity at
/// least `threshold` (and above zero), best first.
pub fn suggest_duplicate_characters(
    store: &RelationalStore,
    series: &SeriesId,
    threshold: f64,
) -> Result<Vec<DuplicateSuggestion>, PreprocessError> {
    let mut chars = store.list_characters(series)?;
    chars.sort_by(|a, b| a.character_id.cmp(&b.character_id));
    let tokens: Vec<BTreeSet<String>> = chars.iter().map(|c| name_tokens(&c.appellations)).collect();
    let mut out = Vec::new();
    for i in 0..chars.len() {
        for j in (i + 1)..chars.len() {
            let score = jaccard_similarity(&tokens[i], &tokens[j]);
            if score > 0.0 && score >= threshold {
                out.push(DuplicateSuggestion {
                    first: chars[i].character_id.clone(),
                    second: chars[j].character_id.clone(),
                    score,
                });
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.first.cmp(&b.first))
            .then_with(|| a.second.cmp(&b.second))
    });
    Ok(out)
}
