//! Memory preparation: load plot files, simplify, resolve pronouns, find
//! and normalize character mentions, and emit the entity-normalized plot.

pub mod entities;
pub mod normalize;
pub mod segment;
pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::memory::MemoryError;
use crate::model::{CharacterId, EpisodeKey, SeriesId};

pub use entities::{
    extract_entities, CapitalizationNer, EntityExtraction, LlmNer, MentionCandidate, MentionSource,
    NerProvider, ProtoEntity,
};
pub use normalize::{
    find_residual_surfaces, normalize_characters, substitute_names, suggest_duplicate_characters,
    name_tokens, DuplicateSuggestion, Normalization,
};
pub use segment::segment_sentences;
pub use stages::{
    pronoun_context_range, resolve_pronouns, simplify_plot, DEFAULT_PRONOUN_WINDOW,
    SIMPLIFY_CHUNK,
};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse an episode key from {0:?}; expected a name like S01E03_plot.txt")]
    KeyParse(String),
    #[error("{0} holds no plot text")]
    EmptyPlot(PathBuf),
    #[error("document has no sentences")]
    EmptyDocument,
    #[error("stage needs status {required:?}, document is {actual:?}")]
    StageOrder {
        required: DocStatus,
        actual: DocStatus,
    },
    #[error("window must be at least 1")]
    InvalidWindow,
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("bad staged document: {0}")]
    Staged(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl PreprocessError {
    pub fn code(&self) -> &'static str {
        match self {
            PreprocessError::Io { .. } => "IO",
            PreprocessError::KeyParse(_) => "KEY_PARSE",
            PreprocessError::EmptyPlot(_) => "EMPTY_PLOT",
            PreprocessError::EmptyDocument => "EMPTY_DOCUMENT",
            PreprocessError::StageOrder { .. } => "STAGE_ORDER",
            PreprocessError::InvalidWindow => "INVALID_WINDOW",
            PreprocessError::Conflict(_) => "CONFLICT",
            PreprocessError::Staged(_) => "STAGED_DOCUMENT",
            PreprocessError::Gateway(e) => e.code(),
            PreprocessError::Memory(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocStatus {
    Loaded,
    Simplified,
    Resolved,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDocument {
    pub series: SeriesId,
    pub episode: EpisodeKey,
    pub raw_text: String,
    pub sentences: Vec<String>,
    #[serde(default)]
    pub simplified: Vec<String>,
    #[serde(default)]
    pub resolved: Vec<String>,
    #[serde(default)]
    pub normalized: Vec<String>,
    /// Surface form → character, filled by normalization.
    #[serde(default)]
    pub surface_map: BTreeMap<String, CharacterId>,
    pub status: DocStatus,
}

impl EpisodeDocument {
    pub fn from_text(series: SeriesId, episode: EpisodeKey, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        Self {
            sentences: segment_sentences(&raw_text),
            series,
            episode,
            raw_text,
            simplified: Vec::new(),
            resolved: Vec::new(),
            normalized: Vec::new(),
            surface_map: BTreeMap::new(),
            status: DocStatus::Loaded,
        }
    }

    pub fn require(&self, status: DocStatus) -> Result<(), PreprocessError> {
        if self.status < status {
            return Err(PreprocessError::StageOrder {
                required: status,
                actual: self.status,
            });
        }
        Ok(())
    }

    /// The plot as one text, sentences separated by spaces.
    pub fn normalized_plot(&self) -> String {
        self.normalized.join(" ")
    }
}

fn key_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[Ss](\d{1,3})[Ee](\d{1,3})").expect("valid regex"))
}

/// Parses the episode key from a file name such as `S01E03_plot.txt`.
pub fn parse_episode_key(file_name: &str) -> Result<EpisodeKey, PreprocessError> {
    let caps = key_pattern()
        .captures(file_name)
        .ok_or_else(|| PreprocessError::KeyParse(file_name.to_string()))?;
    let season = caps[1].parse().map_err(|_| PreprocessError::KeyParse(file_name.to_string()))?;
    let episode = caps[2].parse().map_err(|_| PreprocessError::KeyParse(file_name.to_string()))?;
    EpisodeKey::new(season, episode).map_err(|_| PreprocessError::KeyParse(file_name.to_string()))
}

pub fn load_episode(path: &Path, series: &SeriesId) -> Result<EpisodeDocument, PreprocessError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| PreprocessError::KeyParse(path.display().to_string()))?;
    let episode = parse_episode_key(name)?;
    let raw = fs::read_to_string(path).map_err(|source| PreprocessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if raw.trim().is_empty() {
        return Err(PreprocessError::EmptyPlot(path.to_path_buf()));
    }
    Ok(EpisodeDocument::from_text(series.clone(), episode, raw))
}

/// Plot files of a season directory in episode order. Files that do not
/// look like `S..E..*.txt` are skipped.
pub fn list_episode_files(dir: &Path) -> Result<Vec<(EpisodeKey, PathBuf)>, PreprocessError> {
    let io = |source| PreprocessError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Ok(key) = parse_episode_key(name) {
            out.push((key, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Staged documents live at `<workspace>/staged/<series>/<S01E01>.json`.
pub fn staged_path(workspace: &Path, series: &SeriesId, episode: EpisodeKey) -> PathBuf {
    workspace
        .join("staged")
        .join(series.as_str())
        .join(format!("{episode}.json"))
}

pub fn save_document(workspace: &Path, doc: &EpisodeDocument) -> Result<PathBuf, PreprocessError> {
    let path = staged_path(workspace, &doc.series, doc.episode);
    let io = |source| PreprocessError::Io {
        path: path.clone(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut text =
        serde_json::to_string_pretty(doc).map_err(|e| PreprocessError::Staged(e.to_string()))?;
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(io)?;
    fs::rename(&tmp, &path).map_err(io)?;
    Ok(path)
}

pub fn load_document(
    workspace: &Path,
    series: &SeriesId,
    episode: EpisodeKey,
) -> Result<EpisodeDocument, PreprocessError> {
    let path = staged_path(workspace, series, episode);
    let bytes = fs::read(&path).map_err(|source| PreprocessError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| PreprocessError::Staged(format!("{}: {e}", path.display())))
}

/// Episode keys with a staged document for `series`, in order.
pub fn staged_episodes(workspace: &Path, series: &SeriesId) -> Result<Vec<EpisodeKey>, PreprocessError> {
    let dir = workspace.join("staged").join(series.as_str());
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<EpisodeKey> = fs::read_dir(&dir)
        .map_err(|source| PreprocessError::Io {
            path: dir.clone(),
            source,
        })?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".json")?.parse().ok()
        })
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn episode_key_from_file_name() {
        assert_eq!(parse_episode_key("S01E03_plot.txt").unwrap(), EpisodeKey::new(1, 3).unwrap());
        let err = parse_episode_key("episode3.txt").unwrap_err();
        assert_eq!(err.code(), "KEY_PARSE");
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("S01E01_plot.txt");
        fs::write(&p, "  \n").unwrap();
        let err = load_episode(&p, &SeriesId::new("s").unwrap()).unwrap_err();
        assert_eq!(err.code(), "EMPTY_PLOT");
    }

    #[test]
    fn staged_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let doc = EpisodeDocument::from_text(
            SeriesId::new("s").unwrap(),
            EpisodeKey::new(1, 2).unwrap(),
            "One. Two.",
        );
        save_document(dir.path(), &doc).unwrap();
        assert_eq!(load_document(dir.path(), &doc.series, doc.episode).unwrap(), doc);
        assert_eq!(staged_episodes(dir.path(), &doc.series).unwrap(), vec![doc.episode]);
    }

    #[test]
    fn status_order_is_monotone() {
        assert!(DocStatus::Loaded < DocStatus::Simplified);
        assert!(DocStatus::Resolved < DocStatus::Normalized);
        let doc = EpisodeDocument::from_text(SeriesId::new("s").unwrap(), EpisodeKey::new(1, 1).unwrap(), "x.");
        assert_eq!(doc.require(DocStatus::Resolved).unwrap_err().code(), "STAGE_ORDER");
    }
}
