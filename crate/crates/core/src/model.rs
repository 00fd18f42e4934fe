//! Domain types shared by every other module: series and episode keys, the
//! arc/progression/utterance hierarchy, characters, and arc validation.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid series id {0:?}: expected a lowercase hyphen-separated slug")]
    InvalidSeries(String),
    #[error("invalid episode key {0:?}")]
    InvalidEpisodeKey(String),
    #[error("unknown arc type {0:?}")]
    UnknownArcType(String),
    #[error("id discriminator must not be empty")]
    EmptyDiscriminator,
}

/// Slug identifying a series, e.g. `harbor-general`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SeriesId(String);

impl SeriesId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        let valid = !name.is_empty()
            && !name.starts_with('-')
            && !name.ends_with('-')
            && !name.contains("--")
            && name
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-');
        if valid {
            Ok(Self(name))
        } else {
            Err(ModelError::InvalidSeries(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SeriesId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl<'de> Deserialize<'de> for SeriesId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::new(s).map_err(serde::de::Error::custom)
    }
}

/// Season/episode coordinate. Ordered by season first, then episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpisodeKey {
    season: u32,
    episode: u32,
}

impl EpisodeKey {
    pub fn new(season: u32, episode: u32) -> Result<Self, ModelError> {
        if season == 0 || episode == 0 {
            return Err(ModelError::InvalidEpisodeKey(format!("S{season}E{episode}")));
        }
        Ok(Self { season, episode })
    }

    pub fn season(&self) -> u32 {
        self.season
    }

    pub fn episode(&self) -> u32 {
        self.episode
    }
}

impl fmt::Display for EpisodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{:02}E{:02}", self.season, self.episode)
    }
}

impl FromStr for EpisodeKey {
    type Err = ModelError;

    /// Parses the canonical `S01E02` form (case-insensitive, any digit width).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::InvalidEpisodeKey(s.to_string());
        let upper = s.trim().to_ascii_uppercase();
        let rest = upper.strip_prefix('S').ok_or_else(err)?;
        let (season, episode) = rest.split_once('E').ok_or_else(err)?;
        if season.is_empty()
            || episode.is_empty()
            || !season.bytes().all(|b| b.is_ascii_digit())
            || !episode.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err());
        }
        let season = season.parse().map_err(|_| err())?;
        let episode = episode.parse().map_err(|_| err())?;
        Self::new(season, episode).map_err(|_| err())
    }
}

impl Serialize for EpisodeKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EpisodeKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn compare_episodes(a: EpisodeKey, b: EpisodeKey) -> Ordering {
    a.cmp(&b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArcType {
    Anthology,
    Soap,
    GenreSpecific,
}

impl ArcType {
    pub const ALL: [ArcType; 3] = [ArcType::Anthology, ArcType::Soap, ArcType::GenreSpecific];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArcType::Anthology => "Anthology",
            ArcType::Soap => "Soap",
            ArcType::GenreSpecific => "GenreSpecific",
        }
    }

    pub fn is_serial(&self) -> bool {
        !matches!(self, ArcType::Anthology)
    }
}

impl fmt::Display for ArcType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArcType {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match folded.as_str() {
            "anthology" => Ok(ArcType::Anthology),
            "soap" => Ok(ArcType::Soap),
            "genrespecific" => Ok(ArcType::GenreSpecific),
            _ => Err(ModelError::UnknownArcType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IdKind {
    Arc,
    Progression,
    Character,
    Embedding,
}

impl IdKind {
    fn tag(&self) -> &'static str {
        match self {
            IdKind::Arc => "arc",
            IdKind::Progression => "prg",
            IdKind::Character => "chr",
            IdKind::Embedding => "emb",
        }
    }
}

/// Content-hash id: the same `(kind, series, discriminator)` always yields the
/// same id, so replayed runs are byte-reproducible.
pub fn derive_id(
    kind: IdKind,
    series: &SeriesId,
    discriminator: &str,
) -> Result<String, ModelError> {
    if discriminator.is_empty() {
        return Err(ModelError::EmptyDiscriminator);
    }
    let mut hasher = Sha256::new();
    hasher.update(b"arcmem/id/v1\0");
    hasher.update(kind.tag().as_bytes());
    hasher.update(b"\0");
    hasher.update(series.as_str().as_bytes());
    hasher.update(b"\0");
    hasher.update(discriminator.as_bytes());
    let digest = hasher.finalize();
    Ok(format!("{}-{}", kind.tag(), hex::encode(&digest[..12])))
}

macro_rules! opaque_id {
    ($(#[$meta:meta])* $name:ident, $kind:expr) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn derive(series: &SeriesId, discriminator: &str) -> Result<Self, ModelError> {
                derive_id($kind, series, discriminator).map(Self)
            }

            pub fn from_raw(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

opaque_id!(ArcId, IdKind::Arc);
opaque_id!(ProgressionId, IdKind::Progression);
opaque_id!(CharacterId, IdKind::Character);

/// Comparison form of an appellation: trimmed, inner whitespace collapsed,
/// lowercased.
pub fn normalize_appellation(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Character {
    pub character_id: CharacterId,
    pub series: SeriesId,
    pub preferred_name: String,
    pub appellations: Vec<String>,
}

impl Character {
    /// Builds a character whose appellations include the preferred name,
    /// deduplicated by comparison form and sorted for stable output.
    pub fn new(
        character_id: CharacterId,
        series: SeriesId,
        preferred_name: impl Into<String>,
        appellations: impl IntoIterator<Item = String>,
    ) -> Self {
        let preferred_name = preferred_name.into().trim().to_string();
        let mut c = Self {
            character_id,
            series,
            preferred_name: preferred_name.clone(),
            appellations: Vec::new(),
        };
        c.add_appellation(&preferred_name);
        for a in appellations {
            c.add_appellation(&a);
        }
        c
    }

    /// Returns true when the appellation was new.
    pub fn add_appellation(&mut self, name: &str) -> bool {
        let trimmed = name.trim();
        if trimmed.is_empty() || self.has_appellation(trimmed) {
            return false;
        }
        self.appellations.push(trimmed.to_string());
        self.appellations
            .sort_by(|a, b| normalize_appellation(a).cmp(&normalize_appellation(b)).then(a.cmp(b)));
        true
    }

    pub fn has_appellation(&self, name: &str) -> bool {
        let norm = normalize_appellation(name);
        self.appellations
            .iter()
            .any(|a| normalize_appellation(a) == norm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub ordinal: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progression {
    pub progression_id: ProgressionId,
    pub arc_id: ArcId,
    pub series: SeriesId,
    pub episode: EpisodeKey,
    /// Utterance texts; an utterance's ordinal is its position.
    pub content: Vec<String>,
    pub interfering_characters: Vec<CharacterId>,
}

impl Progression {
    pub fn new(
        arc_id: ArcId,
        series: SeriesId,
        episode: EpisodeKey,
        content: Vec<String>,
        interfering_characters: Vec<CharacterId>,
    ) -> Result<Self, ModelError> {
        let progression_id =
            ProgressionId::derive(&series, &format!("{}/{}", arc_id.as_str(), episode))?;
        Ok(Self {
            progression_id,
            arc_id,
            series,
            episode,
            content,
            interfering_characters,
        })
    }

    pub fn utterances(&self) -> impl Iterator<Item = Utterance> + '_ {
        self.content.iter().enumerate().map(|(ordinal, text)| Utterance {
            ordinal,
            text: text.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeArc {
    pub arc_id: ArcId,
    pub series: SeriesId,
    pub title: String,
    pub description: String,
    pub arc_type: ArcType,
    pub main_characters: Vec<CharacterId>,
    pub progressions: Vec<Progression>,
}

impl NarrativeArc {
    /// Text embedded for the arc's summary record.
    pub fn summary_text(&self) -> String {
        summary_text(&self.title, &self.description)
    }

    pub fn episodes(&self) -> BTreeSet<EpisodeKey> {
        self.progressions.iter().map(|p| p.episode).collect()
    }

    pub fn first_episode(&self) -> Option<EpisodeKey> {
        self.progressions.iter().map(|p| p.episode).min()
    }

    pub fn progression_for(&self, episode: EpisodeKey) -> Option<&Progression> {
        self.progressions.iter().find(|p| p.episode == episode)
    }

    pub fn sort_progressions(&mut self) {
        self.progressions.sort_by_key(|p| p.episode);
    }

    /// Every character id the arc refers to, main and interfering.
    pub fn character_refs(&self) -> BTreeSet<CharacterId> {
        self.main_characters
            .iter()
            .chain(self.progressions.iter().flat_map(|p| p.interfering_characters.iter()))
            .cloned()
            .collect()
    }
}

pub fn summary_text(title: &str, description: &str) -> String {
    format!("{} — {}", title.trim(), description.trim())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptyTitle,
    EmptyDescription,
    NoMainCharacters,
    DuplicateMainCharacter,
    AnthologyMultiEpisode,
    ProgressionsUnsorted,
    DuplicateEpisode,
    EmptyProgression,
    EmptyUtterance,
    UnresolvedPlaceholder,
    ProgressionArcMismatch,
    ProgressionSeriesMismatch,
    UnknownCharacter,
}

impl ViolationCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ViolationCode::EmptyTitle => "EMPTY_TITLE",
            ViolationCode::EmptyDescription => "EMPTY_DESCRIPTION",
            ViolationCode::NoMainCharacters => "NO_MAIN_CHARACTERS",
            ViolationCode::DuplicateMainCharacter => "DUPLICATE_MAIN_CHARACTER",
            ViolationCode::AnthologyMultiEpisode => "ANTHOLOGY_MULTI_EPISODE",
            ViolationCode::ProgressionsUnsorted => "PROGRESSIONS_UNSORTED",
            ViolationCode::DuplicateEpisode => "DUPLICATE_EPISODE",
            ViolationCode::EmptyProgression => "EMPTY_PROGRESSION",
            ViolationCode::EmptyUtterance => "EMPTY_UTTERANCE",
            ViolationCode::UnresolvedPlaceholder => "UNRESOLVED_PLACEHOLDER",
            ViolationCode::ProgressionArcMismatch => "PROGRESSION_ARC_MISMATCH",
            ViolationCode::ProgressionSeriesMismatch => "PROGRESSION_SERIES_MISMATCH",
            ViolationCode::UnknownCharacter => "UNKNOWN_CHARACTER",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

impl Violation {
    pub fn new(code: ViolationCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn placeholder_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\{[A-Za-z_][A-Za-z0-9_]*\}|\[(?i:he|she|him|her|his|they|them|their|pronoun)\]")
            .expect("placeholder regex")
    })
}

/// Checks every structural invariant of an arc. An empty report means valid.
///
/// Character existence is not checked here because it needs the character
/// store; see [`crate::memory::MemoryStore::validate_arc_in_store`].
pub fn validate_arc(arc: &NarrativeArc) -> Vec<Violation> {
    let mut out = Vec::new();
    if arc.title.trim().is_empty() {
        out.push(Violation::new(ViolationCode::EmptyTitle, "title is empty"));
    }
    if arc.description.trim().is_empty() {
        out.push(Violation::new(
            ViolationCode::EmptyDescription,
            "description is empty",
        ));
    }
    if arc.main_characters.is_empty() {
        out.push(Violation::new(
            ViolationCode::NoMainCharacters,
            "arc has no main characters",
        ));
    }
    let mut seen = BTreeSet::new();
    for c in &arc.main_characters {
        if !seen.insert(c) {
            out.push(Violation::new(
                ViolationCode::DuplicateMainCharacter,
                format!("main character {c} listed twice"),
            ));
        }
    }
    if arc
        .progressions
        .windows(2)
        .any(|w| w[0].episode > w[1].episode)
    {
        out.push(Violation::new(
            ViolationCode::ProgressionsUnsorted,
            "progressions are not sorted by episode",
        ));
    }
    let mut episodes = BTreeSet::new();
    for p in &arc.progressions {
        if !episodes.insert(p.episode) {
            out.push(Violation::new(
                ViolationCode::DuplicateEpisode,
                format!("more than one progression in {}", p.episode),
            ));
        }
        if p.arc_id != arc.arc_id {
            out.push(Violation::new(
                ViolationCode::ProgressionArcMismatch,
                format!("progression {} belongs to {}", p.progression_id, p.arc_id),
            ));
        }
        if p.series != arc.series {
            out.push(Violation::new(
                ViolationCode::ProgressionSeriesMismatch,
                format!("progression {} is in series {}", p.progression_id, p.series),
            ));
        }
        if p.content.is_empty() {
            out.push(Violation::new(
                ViolationCode::EmptyProgression,
                format!("progression in {} has no utterances", p.episode),
            ));
        }
        for (i, text) in p.content.iter().enumerate() {
            if text.trim().is_empty() {
                out.push(Violation::new(
                    ViolationCode::EmptyUtterance,
                    format!("utterance {i} in {} is empty", p.episode),
                ));
            } else if placeholder_pattern().is_match(text) {
                out.push(Violation::new(
                    ViolationCode::UnresolvedPlaceholder,
                    format!("utterance {i} in {} contains a placeholder", p.episode),
                ));
            }
        }
    }
    if arc.arc_type == ArcType::Anthology && episodes.len() > 1 {
        let list: Vec<String> = episodes.iter().map(ToString::to_string).collect();
        out.push(Violation::new(
            ViolationCode::AnthologyMultiEpisode,
            format!("anthology arc spans {}", list.join(", ")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> SeriesId {
        SeriesId::new("harbor-general").unwrap()
    }

    fn ep(s: u32, e: u32) -> EpisodeKey {
        EpisodeKey::new(s, e).unwrap()
    }

    fn arc_with(arc_type: ArcType, episodes: &[EpisodeKey]) -> NarrativeArc {
        let s = series();
        let arc_id = ArcId::derive(&s, "test arc").unwrap();
        let progressions = episodes
            .iter()
            .map(|e| {
                Progression::new(
                    arc_id.clone(),
                    s.clone(),
                    *e,
                    vec!["A.".into(), "B.".into(), "C.".into()],
                    vec![],
                )
                .unwrap()
            })
            .collect();
        NarrativeArc {
            arc_id,
            series: s.clone(),
            title: "Test".into(),
            description: "A test arc.".into(),
            arc_type,
            main_characters: vec![CharacterId::derive(&s, "nora vance").unwrap()],
            progressions,
        }
    }

    fn codes(v: &[Violation]) -> Vec<ViolationCode> {
        v.iter().map(|v| v.code).collect()
    }

    #[test]
    fn anthology_across_two_episodes_is_flagged() {
        let arc = arc_with(ArcType::Anthology, &[ep(1, 1), ep(1, 2)]);
        assert_eq!(
            codes(&validate_arc(&arc)),
            vec![ViolationCode::AnthologyMultiEpisode]
        );
    }

    #[test]
    fn soap_with_three_utterances_is_valid() {
        let arc = arc_with(ArcType::Soap, &[ep(1, 1)]);
        assert!(validate_arc(&arc).is_empty());
        let ordinals: Vec<usize> = arc.progressions[0].utterances().map(|u| u.ordinal).collect();
        assert_eq!(ordinals, vec![0, 1, 2]);
    }

    #[test]
    fn empty_title_is_flagged() {
        let mut arc = arc_with(ArcType::Soap, &[ep(1, 1)]);
        arc.title = "   ".into();
        assert_eq!(codes(&validate_arc(&arc)), vec![ViolationCode::EmptyTitle]);
    }

    #[test]
    fn structural_violations_are_all_reported() {
        let mut arc = arc_with(ArcType::Soap, &[ep(1, 2), ep(1, 1), ep(1, 1)]);
        arc.main_characters.clear();
        arc.progressions[0].content = vec![];
        arc.progressions[1].content = vec!["{name} left.".into()];
        let got = codes(&validate_arc(&arc));
        for want in [
            ViolationCode::NoMainCharacters,
            ViolationCode::ProgressionsUnsorted,
            ViolationCode::DuplicateEpisode,
            ViolationCode::EmptyProgression,
            ViolationCode::UnresolvedPlaceholder,
        ] {
            assert!(got.contains(&want), "missing {want} in {got:?}");
        }
    }

    #[test]
    fn episode_ordering_examples() {
        assert_eq!(compare_episodes(ep(1, 2), ep(1, 10)), Ordering::Less);
        assert_eq!(compare_episodes(ep(1, 9), ep(2, 1)), Ordering::Less);
        assert_eq!(compare_episodes(ep(1, 5), ep(1, 5)), Ordering::Equal);
    }

    #[test]
    fn episode_key_canonical_form() {
        assert_eq!(ep(1, 3).to_string(), "S01E03");
        assert_eq!(ep(12, 104).to_string(), "S12E104");
        assert_eq!("s01e03".parse::<EpisodeKey>().unwrap(), ep(1, 3));
        assert!("S00E01".parse::<EpisodeKey>().is_err());
        assert!("S01".parse::<EpisodeKey>().is_err());
        assert!("S1E2x".parse::<EpisodeKey>().is_err());
    }

    #[test]
    fn derive_id_is_deterministic_and_distinct() {
        let s = series();
        let a = derive_id(IdKind::Arc, &s, "Nora and Elias").unwrap();
        assert_eq!(a, derive_id(IdKind::Arc, &s, "Nora and Elias").unwrap());
        assert_ne!(a, derive_id(IdKind::Arc, &s, "Intern Rivalry").unwrap());
        assert_ne!(a, derive_id(IdKind::Progression, &s, "Nora and Elias").unwrap());
        assert_eq!(
            derive_id(IdKind::Arc, &s, ""),
            Err(ModelError::EmptyDiscriminator)
        );
    }

    #[test]
    fn ids_round_trip_through_json() {
        let id = ArcId::derive(&series(), "x").unwrap();
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(serde_json::from_str::<ArcId>(&json).unwrap(), id);
    }

    #[test]
    fn series_slug_rules() {
        assert!(SeriesId::new("greys-anatomy").is_ok());
        assert!(SeriesId::new("").is_err());
        assert!(SeriesId::new("Greys").is_err());
        assert!(SeriesId::new("a--b").is_err());
        assert!(serde_json::from_str::<SeriesId>("\"Bad Slug\"").is_err());
    }

    #[test]
    fn appellations_compare_case_insensitively() {
        let s = series();
        let mut c = Character::new(
            CharacterId::derive(&s, "jerry frost").unwrap(),
            s,
            "Jerry Frost",
            vec!["Frost".to_string()],
        );
        assert!(c.has_appellation("  jerry   FROST "));
        assert!(!c.add_appellation("FROST"));
        assert!(c.add_appellation("Mr. Frost"));
        assert_eq!(c.appellations.len(), 3);
        assert!(c.appellations.contains(&"Jerry Frost".to_string()));
    }

    #[test]
    fn arc_json_uses_canonical_field_names() {
        let arc = arc_with(ArcType::GenreSpecific, &[ep(1, 1)]);
        let v = serde_json::to_value(&arc).unwrap();
        assert_eq!(v["arc_type"], "GenreSpecific");
        assert_eq!(v["progressions"][0]["episode"], "S01E01");
        assert_eq!(v["progressions"][0]["content"][1], "B.");
        let back: NarrativeArc = serde_json::from_value(v).unwrap();
        assert_eq!(back, arc);
    }
}
