//! LLM-backed preprocessing stages: simplification and pronoun resolution.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use super::{DocStatus, EpisodeDocument, PreprocessError};
use crate::gateway::{ids, vars, Gateway};

/// Sentences per simplification request.
pub const SIMPLIFY_CHUNK: usize = 20;
/// Sentences visible per pronoun-resolution request, target included.
pub const DEFAULT_PRONOUN_WINDOW: usize = 15;

#[derive(Deserialize)]
struct Simplified {
    sentences: Vec<String>,
}

#[derive(Deserialize)]
struct Resolved {
    sentence: String,
}

fn numbered(lines: &[String]) -> String {
    lines
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Rewrites `doc.sentences` into simple sentences, in chunks of
/// [`SIMPLIFY_CHUNK`].
pub fn simplify_plot(
    mut doc: EpisodeDocument,
    gateway: &Gateway,
) -> Result<EpisodeDocument, PreprocessError> {
    if doc.sentences.is_empty() {
        return Err(PreprocessError::EmptyDocument);
    }
    let mut out = Vec::with_capacity(doc.sentences.len());
    for chunk in doc.sentences.chunks(SIMPLIFY_CHUNK) {
        let v = vars([
            ("series", doc.series.to_string()),
            ("episode", doc.episode.to_string()),
            ("sentences", numbered(chunk)),
        ]);
        let (resp, _): (Simplified, _) = gateway.complete_as(ids::SIMPLIFY_PLOT, &v)?;
        out.extend(
            resp.sentences
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty()),
        );
    }
    doc.simplified = out;
    doc.resolved.clear();
    doc.normalized.clear();
    doc.surface_map.clear();
    doc.status = DocStatus::Simplified;
    Ok(doc)
}

fn pronoun_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(he|she|him|her|his|hers|himself|herself|they|them|their|theirs|themselves)\b",
        )
        .expect("valid regex")
    })
}

pub fn has_third_person_pronoun(sentence: &str) -> bool {
    pronoun_pattern().is_match(sentence)
}

/// Indices of the sentences shown as context for the sentence at `target`:
/// up to `window - 1` sentences immediately before it.
pub fn pronoun_context_range(target: usize, window: usize) -> Range<usize> {
    target.saturating_sub(window.saturating_sub(1))..target
}

/// Replaces third-person pronouns with character names, one request per
/// sentence that contains one. Context comes from sentences already
/// resolved, so earlier replacements inform later ones.
pub fn resolve_pronouns(
    mut doc: EpisodeDocument,
    gateway: &Gateway,
    window: usize,
) -> Result<EpisodeDocument, PreprocessError> {
    doc.require(DocStatus::Simplified)?;
    if window == 0 {
        return Err(PreprocessError::InvalidWindow);
    }
    let mut resolved: Vec<String> = Vec::with_capacity(doc.simplified.len());
    for (i, sentence) in doc.simplified.iter().enumerate() {
        if !has_third_person_pronoun(sentence) {
            resolved.push(sentence.clone());
            continue;
        }
        let context = &resolved[pronoun_context_range(i, window)];
        let context = if context.is_empty() {
            "(none)".to_string()
        } else {
            context.join("\n")
        };
        let v = vars([("context", context), ("target", sentence.clone())]);
        let (resp, _): (Resolved, _) = gateway.complete_as(ids::RESOLVE_PRONOUNS, &v)?;
        resolved.push(resp.sentence.trim().to_string());
    }
    doc.resolved = resolved;
    doc.normalized.clear();
    doc.surface_map.clear();
    doc.status = DocStatus::Resolved;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn context_window_clips_at_start() {
        // Third sentence (index 2) sees the two before it.
        assert_eq!(pronoun_context_range(2, 15), 0..2);
        // Twentieth sentence (index 19) sees fourteen before it.
        assert_eq!(pronoun_context_range(19, 15), 5..19);
        assert_eq!(pronoun_context_range(19, 15).len() + 1, 15);
    }

    #[test]
    fn pronoun_detection() {
        assert!(has_third_person_pronoun("Then she left."));
        assert!(has_third_person_pronoun("His pager buzzed."));
        assert!(!has_third_person_pronoun("Sheila helps Theo."));
        assert!(!has_third_person_pronoun("Nora Vance arrives."));
    }
}
