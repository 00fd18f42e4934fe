//! Comparison of extracted arcs and characters against a human gold
//! standard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{embed_texts, EmbedError, EmbeddingProvider};
use crate::memory::similarity::cosine_similarity;
use crate::memory::MemoryError;
use crate::model::{normalize_appellation, ArcId, ArcType, Character, EpisodeKey, NarrativeArc, SeriesId};

pub const DEFAULT_THETA_MATCH: f64 = 0.6;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("conflicting overrides: {0}")]
    ConflictingOverride(String),
    #[error("override names unknown extracted arc {0}")]
    UnknownArc(ArcId),
    #[error("override points at gold index {index}, but there are only {len} gold arcs")]
    GoldIndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::ConflictingOverride(_) => "OVERRIDE_CONFLICT",
            EvalError::UnknownArc(_) => "UNKNOWN_ARC",
            EvalError::GoldIndexOutOfRange { .. } => "GOLD_INDEX",
            EvalError::Embedding(e) => e.code(),
            EvalError::Memory(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldArc {
    pub title: String,
    pub arc_type: ArcType,
    #[serde(default)]
    pub episodes: Vec<EpisodeKey>,
    #[serde(default)]
    pub main_characters: Vec<String>,
}

/// Pins an extracted arc to a gold arc, or to nothing when `gold_index`
/// is absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingOverride {
    pub arc_id: ArcId,
    pub gold_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldStandard {
    pub series: SeriesId,
    pub season: u32,
    pub gold_arcs: Vec<GoldArc>,
    #[serde(default)]
    pub gold_characters: Vec<String>,
    #[serde(default)]
    pub mapping_overrides: Vec<MappingOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub arc_id: ArcId,
    pub gold_index: usize,
    /// Absent for pairs pinned by an override.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArcMatching {
    pub pairs: Vec<MatchedPair>,
    /// Unmatched extracted arcs whose best score is against a gold arc
    /// already taken: they re-describe a matched storyline.
    pub duplicates: Vec<ArcId>,
}

impl ArcMatching {
    pub fn gold_for(&self, arc_id: &ArcId) -> Option<usize> {
        self.pairs.iter().find(|p| &p.arc_id == arc_id).map(|p| p.gold_index)
    }
}

/// Greedy best-first one-to-one matching over a score matrix
/// (`scores[i][j]` = extracted `i` vs gold `j`). Overrides are applied
/// first and take absolute precedence; remaining pairs scoring at least
/// `theta` are taken best first, ties broken by arc id then gold index.
pub fn match_by_scores(
    arc_ids: &[ArcId],
    scores: &[Vec<f64>],
    gold_len: usize,
    overrides: &[MappingOverride],
    theta: f64,
) -> Result<ArcMatching, EvalError> {
    let mut pinned: BTreeMap<&ArcId, Option<usize>> = BTreeMap::new();
    let mut gold_taken: BTreeMap<usize, &ArcId> = BTreeMap::new();
    for o in overrides {
        if !arc_ids.contains(&o.arc_id) {
            return Err(EvalError::UnknownArc(o.arc_id.clone()));
        }
        if let Some(g) = o.gold_index {
            if g >= gold_len {
                return Err(EvalError::GoldIndexOutOfRange { index: g, len: gold_len });
            }
        }
        if let Some(prev) = pinned.insert(&o.arc_id, o.gold_index) {
            if prev != o.gold_index {
                return Err(EvalError::ConflictingOverride(format!(
                    "{} pinned to {prev:?} and {:?}",
                    o.arc_id, o.gold_index
                )));
            }
        }
        if let Some(g) = o.gold_index {
            if let Some(other) = gold_taken.insert(g, &o.arc_id) {
                if other != &o.arc_id {
                    return Err(EvalError::ConflictingOverride(format!(
                        "gold arc {g} pinned to both {other} and {}",
                        o.arc_id
                    )));
                }
            }
        }
    }

    let mut pairs: Vec<MatchedPair> = Vec::new();
    for (arc, g) in &pinned {
        if let Some(g) = g {
            pairs.push(MatchedPair {
                arc_id: (*arc).clone(),
                gold_index: *g,
                score: None,
            });
        }
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, id) in arc_ids.iter().enumerate() {
        if pinned.contains_key(id) {
            continue;
        }
        for (j, &s) in scores[i].iter().enumerate().take(gold_len) {
            if s >= theta && !gold_taken.contains_key(&j) {
                candidates.push((s, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| arc_ids[a.1].cmp(&arc_ids[b.1]))
            .then(a.2.cmp(&b.2))
    });
    let mut arc_done: BTreeSet<usize> = BTreeSet::new();
    let mut gold_done: BTreeSet<usize> = gold_taken.keys().copied().collect();
    for (s, i, j) in candidates {
        if arc_done.contains(&i) || gold_done.contains(&j) {
            continue;
        }
        arc_done.insert(i);
        gold_done.insert(j);
        pairs.push(MatchedPair {
            arc_id: arc_ids[i].clone(),
            gold_index: j,
            score: Some(s),
        });
    }
    pairs.sort_by(|a, b| a.arc_id.cmp(&b.arc_id));

    let matched: BTreeSet<&ArcId> = pairs.iter().map(|p| &p.arc_id).collect();
    let mut duplicates = Vec::new();
    for (i, id) in arc_ids.iter().enumerate() {
        if matched.contains(id) || pinned.get(id) == Some(&None) {
            continue;
        }
        let best = scores[i]
            .iter()
            .take(gold_len)
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)));
        if let Some((j, &s)) = best {
            if s >= theta && gold_done.contains(&j) {
                duplicates.push(id.clone());
            }
        }
    }
    duplicates.sort();
    Ok(ArcMatching { pairs, duplicates })
}

/// Matches extracted arcs to gold arcs by cosine similarity between each
/// arc's summary text and the gold title.
pub fn match_arcs(
    extracted: &[NarrativeArc],
    gold: &GoldStandard,
    extra_overrides: &[MappingOverride],
    embedder: &dyn EmbeddingProvider,
    theta: f64,
) -> Result<ArcMatching, EvalError> {
    let arc_ids: Vec<ArcId> = extracted.iter().map(|a| a.arc_id.clone()).collect();
    let overrides: Vec<MappingOverride> = gold
        .mapping_overrides
        .iter()
        .chain(extra_overrides)
        .cloned()
        .collect();
    if extracted.is_empty() || gold.gold_arcs.is_empty() {
        return match_by_scores(&arc_ids, &vec![Vec::new(); arc_ids.len()], gold.gold_arcs.len(), &overrides, theta);
    }
    let arc_vecs = embed_texts(embedder, &extracted.iter().map(|a| a.summary_text()).collect::<Vec<_>>())?;
    let gold_vecs = embed_texts(embedder, &gold.gold_arcs.iter().map(|g| g.title.clone()).collect::<Vec<_>>())?;
    let mut scores = Vec::with_capacity(arc_vecs.len());
    for a in &arc_vecs {
        let mut row = Vec::with_capacity(gold_vecs.len());
        for g in &gold_vecs {
            row.push(cosine_similarity(a, g)?);
        }
        scores.push(row);
    }
    match_by_scores(&arc_ids, &scores, gold.gold_arcs.len(), &overrides, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub extracted: usize,
    pub correct: usize,
    /// `correct / extracted`; `None` (serialized as null) when nothing was
    /// extracted.
    pub precision: Option<f64>,
}

impl TypeStats {
    pub fn from_counts(extracted: usize, correct: usize) -> Self {
        Self {
            extracted,
            correct,
            precision: (extracted > 0).then(|| correct as f64 / extracted as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacterStats {
    pub extracted: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

impl CharacterStats {
    pub fn from_counts(extracted: usize, correct: usize) -> Self {
        Self {
            extracted,
            correct,
            accuracy: (extracted > 0).then(|| correct as f64 / extracted as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissedGold {
    pub gold_index: usize,
    pub title: String,
    pub arc_type: ArcType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<String, TypeStats>,
    pub overall: TypeStats,
    pub characters: CharacterStats,
    pub matched: usize,
    pub unmatched_extracted: usize,
    pub duplication_count: usize,
    pub missed_gold: Vec<MissedGold>,
}

/// An extracted arc is correct when it is matched to a gold arc of the
/// same type. A character is correct when one of its appellations equals
/// (after case folding) a gold name not already claimed.
pub fn compute_report(
    matching: &ArcMatching,
    extracted: &[NarrativeArc],
    gold: &GoldStandard,
    characters: &[Character],
) -> EvalReport {
    let mut per_type: BTreeMap<String, TypeStats> = BTreeMap::new();
    let mut counts: BTreeMap<ArcType, (usize, usize)> = ArcType::ALL.iter().map(|t| (*t, (0, 0))).collect();
    let mut matched = 0;
    for arc in extracted {
        let entry = counts.get_mut(&arc.arc_type).expect("all types present");
        entry.0 += 1;
        if let Some(g) = matching.gold_for(&arc.arc_id) {
            matched += 1;
            if gold.gold_arcs.get(g).is_some_and(|ga| ga.arc_type == arc.arc_type) {
                entry.1 += 1;
            }
        }
    }
    let (mut all_ex, mut all_ok) = (0, 0);
    for (t, (ex, ok)) in counts {
        all_ex += ex;
        all_ok += ok;
        per_type.insert(t.as_str().to_string(), TypeStats::from_counts(ex, ok));
    }

    let mut gold_names: BTreeMap<String, bool> = gold
        .gold_characters
        .iter()
        .map(|n| (normalize_appellation(n), false))
        .collect();
    let mut char_ok = 0;
    for c in characters {
        let hit = c.appellations.iter().find_map(|a| {
            let n = normalize_appellation(a);
            match gold_names.get(&n) {
                Some(false) => Some(n),
                _ => None,
            }
        });
        if let Some(n) = hit {
            gold_names.insert(n, true);
            char_ok += 1;
        }
    }

    let taken: BTreeSet<usize> = matching.pairs.iter().map(|p| p.gold_index).collect();
    let missed_gold = gold
        .gold_arcs
        .iter()
        .enumerate()
        .filter(|(i, _)| !taken.contains(i))
        .map(|(i, g)| MissedGold {
            gold_index: i,
            title: g.title.clone(),
            arc_type: g.arc_type,
        })
        .collect();

    EvalReport {
        per_type,
        overall: TypeStats::from_counts(all_ex, all_ok),
        characters: CharacterStats::from_counts(characters.len(), char_ok),
        matched,
        unmatched_extracted: extracted.len() - matched,
        duplication_count: matching.duplicates.len(),
        missed_gold,
    }
}

fn pct(p: Option<f64>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{:.1}%", p * 100.0))
}

/// Plain-text table of a report.
pub fn render_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<15} {:>9} {:>7} {:>9}", "arc type", "extracted", "correct", "precision");
    for (t, st) in report.per_type.iter().chain([(&"all".to_string(), &report.overall)]) {
        let _ = writeln!(s, "{:<15} {:>9} {:>7} {:>9}", t, st.extracted, st.correct, pct(st.precision));
    }
    let _ = writeln!(
        s,
        "characters: {} of {} correct ({})",
        report.characters.correct,
        report.characters.extracted,
        pct(report.characters.accuracy)
    );
    let _ = writeln!(
        s,
        "matched {}, unmatched {}, duplicates {}, missed gold {}",
        report.matched,
        report.unmatched_extracted,
        report.duplication_count,
        report.missed_gold.len()
    );
    for m in &report.missed_gold {
        let _ = writeln!(s, "  missed [{}] ({}) {}", m.gold_index, m.arc_type, m.title);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<ArcId> {
        (0..n).map(|i| ArcId::from_raw(format!("arc-{i}"))).collect()
    }

    #[test]
    fn precision_from_counts() {
        let s = TypeStats::from_counts(28, 25);
        assert!((s.precision.unwrap() - 0.893).abs() < 0.001);
        assert_eq!(TypeStats::from_counts(0, 0).precision, None);
        let c = CharacterStats::from_counts(62, 61);
        assert_eq!((c.correct, c.extracted), (61, 62));
    }

    #[test]
    fn null_precision_serializes_as_null() {
        let v = serde_json::to_value(TypeStats::from_counts(0, 0)).unwrap();
        assert!(v["precision"].is_null());
    }

    #[test]
    fn override_wins_regardless_of_score() {
        let a = ids(2);
        let scores = vec![vec![0.0, 0.9, 0.1, 0.0], vec![0.95, 0.0, 0.0, 0.0]];
        let o = [MappingOverride { arc_id: a[0].clone(), gold_index: Some(3) }];
        let m = match_by_scores(&a, &scores, 4, &o, 0.6).unwrap();
        assert_eq!(m.gold_for(&a[0]), Some(3));
        assert_eq!(m.gold_for(&a[1]), Some(0));
    }

    #[test]
    fn higher_score_wins_and_loser_is_duplicate() {
        let a = ids(3);
        let scores = vec![vec![0.7, 0.1], vec![0.9, 0.2], vec![0.1, 0.3]];
        let m = match_by_scores(&a, &scores, 2, &[], 0.6).unwrap();
        assert_eq!(m.gold_for(&a[1]), Some(0));
        assert_eq!(m.gold_for(&a[0]), None);
        assert_eq!(m.gold_for(&a[2]), None);
        assert_eq!(m.duplicates, vec![a[0].clone()]);
    }

    #[test]
    fn empty_gold_gives_empty_matching() {
        let a = ids(2);
        let m = match_by_scores(&a, &[vec![], vec![]], 0, &[], 0.6).unwrap();
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn conflicting_overrides_error() {
        let a = ids(2);
        let scores = vec![vec![0.0; 2]; 2];
        let o = [
            MappingOverride { arc_id: a[0].clone(), gold_index: Some(1) },
            MappingOverride { arc_id: a[1].clone(), gold_index: Some(1) },
        ];
        assert_eq!(match_by_scores(&a, &scores, 2, &o, 0.6).unwrap_err().code(), "OVERRIDE_CONFLICT");
        let o = [
            MappingOverride { arc_id: a[0].clone(), gold_index: Some(1) },
            MappingOverride { arc_id: a[0].clone(), gold_index: None },
        ];
        assert!(match_by_scores(&a, &scores, 2, &o, 0.6).is_err());
    }
}
