//! The batch verbs. Each returns data; `main` decides how to print it.

use std::fs;
use std::path::Path;

use arcmem_core::evaluation::{compute_report, match_arcs, EvalReport, GoldStandard, MappingOverride};
use arcmem_core::memory::ArcListFilter;
use arcmem_core::pipeline::{EpisodeExtractionResult, RunEvent};
use arcmem_core::preprocess::{
    self, extract_entities, normalize_characters, resolve_pronouns, simplify_plot,
    substitute_names, DocStatus,
};
use arcmem_core::{Character, EpisodeKey, NarrativeArc, SeriesId};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::services::Services;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedEpisode {
    pub episode: EpisodeKey,
    pub sentences: usize,
}

/// Stages every plot file of a season directory. Re-ingesting an episode
/// resets its staged document to the loaded state.
pub fn ingest(svc: &Services, series: &SeriesId, dir: &Path) -> Result<Vec<IngestedEpisode>, CliError> {
    let files = preprocess::list_episode_files(dir)?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no S..E..*.txt plot files in {}", dir.display())));
    }
    let mut out = Vec::new();
    for (_, path) in files {
        let doc = preprocess::load_episode(&path, series)?;
        if doc.sentences.is_empty() {
            return Err(preprocess::PreprocessError::EmptyPlot(path).into());
        }
        preprocess::save_document(svc.workspace(), &doc)?;
        out.push(IngestedEpisode {
            episode: doc.episode,
            sentences: doc.sentences.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PreprocessEvent {
    EpisodeStarted { episode: EpisodeKey },
    EpisodeSkipped { episode: EpisodeKey },
    EpisodeNormalized {
        episode: EpisodeKey,
        sentences: usize,
        characters_created: usize,
        characters_extended: usize,
        rejected_mentions: Vec<String>,
    },
}

/// Runs simplification, pronoun resolution, entity extraction,
/// normalization and substitution over the staged episodes in order.
/// Already normalized documents are skipped unless `force`.
pub fn preprocess(
    svc: &Services,
    series: &SeriesId,
    only: Option<EpisodeKey>,
    force: bool,
    sink: &mut dyn FnMut(&PreprocessEvent),
) -> Result<(), CliError> {
    let episodes = preprocess::staged_episodes(svc.workspace(), series)?;
    if let Some(e) = only {
        if !episodes.contains(&e) {
            return Err(CliError::Usage(format!("{e} is not staged; run ingest first")));
        }
    }
    let ner = svc.ner();
    for episode in episodes.into_iter().filter(|e| only.map_or(true, |o| o == *e)) {
        let doc = preprocess::load_document(svc.workspace(), series, episode)?;
        if doc.status == DocStatus::Normalized && !force {
            sink(&PreprocessEvent::EpisodeSkipped { episode });
            continue;
        }
        sink(&PreprocessEvent::EpisodeStarted { episode });
        let doc = simplify_plot(doc, &svc.gateway)?;
        let doc = resolve_pronouns(doc, &svc.gateway, svc.config.pronoun_window)?;
        let extraction = extract_entities(&doc, ner.as_ref(), Some(&svc.gateway))?;
        let norm = normalize_characters(&extraction, &svc.memory.relational, series)?;
        let doc = substitute_names(doc, &norm)?;
        preprocess::save_document(svc.workspace(), &doc)?;
        sink(&PreprocessEvent::EpisodeNormalized {
            episode,
            sentences: doc.normalized.len(),
            characters_created: norm.created.len(),
            characters_extended: norm.extended.len(),
            rejected_mentions: extraction.rejected.clone(),
        });
    }
    Ok(())
}

pub fn extract(
    svc: &Services,
    series: &SeriesId,
    season: u32,
    episode: Option<u32>,
    force: bool,
    sink: &mut dyn FnMut(&RunEvent),
) -> Result<Vec<EpisodeExtractionResult>, CliError> {
    Ok(svc
        .pipeline(&svc.gateway)
        .run_season(series, season, episode, force, sink)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::BadInput {
        path: path.to_path_buf(),
        source,
    })
}

/// Arcs of `series` with at least one progression in `season`.
pub fn season_arcs(svc: &Services, series: &SeriesId, season: u32) -> Result<Vec<NarrativeArc>, CliError> {
    Ok(svc
        .memory
        .relational
        .list_arcs(&ArcListFilter {
            series: Some(series.clone()),
            ..Default::default()
        })?
        .into_iter()
        .filter(|a| a.progressions.iter().any(|p| p.episode.season() == season))
        .collect())
}

/// Scores the stored arcs and characters against a gold standard.
pub fn evaluate(svc: &Services, gold: &Path, overrides: Option<&Path>) -> Result<EvalReport, CliError> {
    let gold: GoldStandard = read_json(gold)?;
    let extra: Vec<MappingOverride> = match overrides {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let arcs = season_arcs(svc, &gold.series, gold.season)?;
    let characters = svc.memory.relational.list_characters(&gold.series)?;
    let matching = match_arcs(&arcs, &gold, &extra, svc.embedder.as_ref(), svc.config.theta_match)?;
    Ok(compute_report(&matching, &arcs, &gold, &characters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesExport {
    pub series: SeriesId,
    pub characters: Vec<Character>,
    pub arcs: Vec<NarrativeArc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub series: Vec<SeriesExport>,
}

/// Every series with its characters (by preferred name) and arcs (by
/// title), ids breaking ties, progressions in episode order.
pub fn export(svc: &Services) -> Result<Export, CliError> {
    let mut out = Vec::new();
    for series in svc.memory.relational.list_series()? {
        let mut characters = svc.memory.relational.list_characters(&series)?;
        characters.sort_by(|a, b| {
            a.preferred_name
                .cmp(&b.preferred_name)
                .then_with(|| a.character_id.cmp(&b.character_id))
        });
        let mut arcs = svc.memory.relational.list_arcs(&ArcListFilter {
            series: Some(series.clone()),
            ..Default::default()
        })?;
        for a in &mut arcs {
            a.sort_progressions();
        }
        arcs.sort_by(|a, b| a.title.cmp(&b.title).then_with(|| a.arc_id.cmp(&b.arc_id)));
        out.push(SeriesExport {
            series,
            characters,
            arcs,
        });
    }
    out.sort_by(|a, b| a.series.cmp(&b.series));
    Ok(Export { series: out })
}

/// Pretty JSON with a trailing newline; stable for golden comparisons.
pub fn export_text(svc: &Services) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(&export(svc)?).expect("export serializes");
    s.push('\n');
    Ok(s)
}
