#![allow(dead_code)]

pub mod ops;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use arcmem_cli::commands::{self, PreprocessEvent};
use arcmem_cli::{AppConfig, CliError, Services};
use arcmem_core::gateway::narrator::{NarrativeScript, ScriptedNarrator};
use arcmem_core::gateway::{ChatProvider, GatewayMode, GatewayStats};
use arcmem_core::pipeline::{EpisodeExtractionResult, RunEvent};
use arcmem_core::SeriesId;

pub const SERIES: &str = "harbor-general";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("repo root")
}

pub fn season_dir() -> PathBuf {
    repo_root().join("corpus").join(SERIES).join("season-01")
}

pub fn script_path() -> PathBuf {
    repo_root().join("corpus").join(SERIES).join("narrator_script.json")
}

pub fn fixtures_dir() -> PathBuf {
    repo_root().join("fixtures").join("llm")
}

pub fn golden_path() -> PathBuf {
    repo_root().join("golden").join(format!("{SERIES}.export.json"))
}

pub fn series() -> SeriesId {
    SERIES.parse().expect("valid slug")
}

pub fn config(workspace: &Path, fixtures: &Path, mode: GatewayMode) -> AppConfig {
    AppConfig {
        workspace: workspace.to_path_buf(),
        fixtures_dir: fixtures.to_path_buf(),
        mode,
        ..AppConfig::default()
    }
}

pub fn narrator() -> Arc<ScriptedNarrator> {
    Arc::new(ScriptedNarrator::new(
        NarrativeScript::load(&script_path()).expect("narrator script"),
    ))
}

pub struct GoldenRun {
    pub export: String,
    pub results: Vec<EpisodeExtractionResult>,
    pub events: Vec<RunEvent>,
    pub stats: GatewayStats,
    pub services: Services,
}

/// ingest → preprocess → extract → export over the mini-season. With a
/// narrator the gateway records; without one it replays.
pub fn golden_run(
    workspace: &Path,
    fixtures: &Path,
    narrator: Option<Arc<ScriptedNarrator>>,
) -> Result<GoldenRun, CliError> {
    let mode = if narrator.is_some() {
        GatewayMode::Record
    } else {
        GatewayMode::Replay
    };
    let provider = narrator.clone().map(|n| n as Arc<dyn ChatProvider>);
    let svc = Services::open(config(workspace, fixtures, mode), provider)?;
    let series = series();
    commands::ingest(&svc, &series, &season_dir())?;
    commands::preprocess(&svc, &series, None, false, &mut |e| {
        if let (Some(n), PreprocessEvent::EpisodeStarted { episode }) = (&narrator, e) {
            n.set_episode(*episode);
        }
    })?;
    let mut events = Vec::new();
    let results = commands::extract(&svc, &series, 1, None, false, &mut |e| {
        if let (Some(n), RunEvent::RunStarted { episode, .. }) = (&narrator, e) {
            n.set_episode(*episode);
        }
        events.push(e.clone());
    })?;
    let export = commands::export_text(&svc)?;
    Ok(GoldenRun {
        export,
        results,
        events,
        stats: svc.gateway.stats(),
        services: svc,
    })
}
