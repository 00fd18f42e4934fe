use std::collections::BTreeSet;

use arcmem_core::gateway::{ids, vars};
use arcmem_core::memory::ArcListFilter;
use arcmem_core::preprocess::{self, DocStatus};
use arcmem_core::{
    normalize_appellation, ArcId, ArcType, CharacterId, EpisodeKey, NarrativeArc, Progression,
    SeriesId,
};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use serde::{Deserialize, Serialize};

use super::{ApiError, AppState};

fn parse_series(raw: &str) -> Result<SeriesId, ApiError> {
    raw.parse().map_err(|e: arcmem_core::ModelError| ApiError::bad_request("BAD_SERIES", e.to_string()))
}

pub(super) fn parse_episode(raw: &str) -> Result<EpisodeKey, ApiError> {
    raw.parse()
        .map_err(|e: arcmem_core::ModelError| ApiError::bad_request("BAD_EPISODE", e.to_string()))
}

fn load_arc(state: &AppState, id: &str) -> Result<NarrativeArc, ApiError> {
    state
        .svc
        .memory
        .relational
        .find_arc(&ArcId::from_raw(id))?
        .ok_or_else(|| ApiError::not_found(format!("arc {id}")))
}

/// Validates, re-embeds and saves.
fn commit(state: &AppState, arc: &NarrativeArc) -> Result<(), ApiError> {
    state.svc.memory.commit_arc(arc, state.svc.embedder.as_ref())?;
    Ok(())
}

// --- timeline --------------------------------------------------------------

#[derive(Debug, Deserialize)]
pub struct TimelineQuery {
    #[serde(rename = "type")]
    pub arc_type: Option<String>,
    /// A character id or any of its appellations.
    pub character: Option<String>,
}

/// Rows are arcs, columns are episodes; each row carries only the
/// progressions of the requested season.
#[derive(Debug, Serialize, Deserialize)]
pub struct Timeline {
    pub series: SeriesId,
    pub season: u32,
    pub episodes: Vec<EpisodeKey>,
    pub arcs: Vec<NarrativeArc>,
}

pub async fn timeline(
    State(state): State<AppState>,
    Path((series, season)): Path<(String, u32)>,
    Query(q): Query<TimelineQuery>,
) -> Result<Json<Timeline>, ApiError> {
    let series = parse_series(&series)?;
    let store = &state.svc.memory.relational;
    let arc_type = match q.arc_type.as_deref().filter(|s| !s.is_empty()) {
        Some(t) => Some(t.parse::<ArcType>()?),
        None => None,
    };
    let character = match q.character.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(c) => {
            let id = CharacterId::from_raw(c);
            if store.find_character(&id)?.is_some() {
                Some(id)
            } else {
                let found = store
                    .find_character_by_appellation(&series, c)?
                    .ok_or_else(|| ApiError::not_found(format!("character {c}")))?;
                Some(found.character_id)
            }
        }
    };
    let mut arcs = store.list_arcs(&ArcListFilter {
        series: Some(series.clone()),
        arc_type,
        character,
    })?;
    let mut episodes: BTreeSet<EpisodeKey> = preprocess::staged_episodes(state.svc.workspace(), &series)?
        .into_iter()
        .chain(store.processed_episodes(&series)?)
        .filter(|e| e.season() == season)
        .collect();
    for a in &mut arcs {
        a.progressions.retain(|p| p.episode.season() == season);
        a.sort_progressions();
        episodes.extend(a.progressions.iter().map(|p| p.episode));
    }
    arcs.retain(|a| !a.progressions.is_empty());
    arcs.sort_by(|a, b| {
        a.first_episode()
            .cmp(&b.first_episode())
            .then_with(|| a.title.cmp(&b.title))
            .then_with(|| a.arc_id.cmp(&b.arc_id))
    });
    Ok(Json(Timeline {
        series,
        season,
        episodes: episodes.into_iter().collect(),
        arcs,
    }))
}

pub async fn get_arc(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<NarrativeArc>, ApiError> {
    Ok(Json(load_arc(&state, &id)?))
}

// --- create / edit / delete ------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewProgression {
    pub episode: EpisodeKey,
    pub content: Vec<String>,
    #[serde(default)]
    pub interfering_characters: Vec<CharacterId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewArc {
    pub series: SeriesId,
    pub title: String,
    pub description: String,
    pub arc_type: ArcType,
    pub main_characters: Vec<CharacterId>,
    pub progressions: Vec<NewProgression>,
}

/// Same scheme as arcs created by the pipeline: first episode plus
/// normalized title, `#n` appended on collision.
fn fresh_arc_id(state: &AppState, series: &SeriesId, first: EpisodeKey, title: &str) -> Result<ArcId, ApiError> {
    let base = format!("{first}/{}", normalize_appellation(title));
    let mut id = ArcId::derive(series, &base)?;
    let mut n = 1;
    while state.svc.memory.relational.find_arc(&id)?.is_some() {
        n += 1;
        id = ArcId::derive(series, &format!("{base}#{n}"))?;
    }
    Ok(id)
}

fn build_progression(arc: &NarrativeArc, p: NewProgression) -> Result<Progression, ApiError> {
    Ok(Progression::new(
        arc.arc_id.clone(),
        arc.series.clone(),
        p.episode,
        p.content,
        p.interfering_characters,
    )?)
}

pub async fn create(
    State(state): State<AppState>,
    Json(body): Json<NewArc>,
) -> Result<(StatusCode, Json<NarrativeArc>), ApiError> {
    let Some(first) = body.progressions.iter().map(|p| p.episode).min() else {
        return Err(ApiError::bad_request(
            "NO_PROGRESSIONS",
            "an arc is created with at least one progression",
        ));
    };
    let lock = state.series_lock(&body.series);
    let _guard = lock.lock().await;
    let arc_id = fresh_arc_id(&state, &body.series, first, &body.title)?;
    let mut arc = NarrativeArc {
        arc_id,
        series: body.series,
        title: body.title,
        description: body.description,
        arc_type: body.arc_type,
        main_characters: body.main_characters,
        progressions: Vec::new(),
    };
    for p in body.progressions {
        let p = build_progression(&arc, p)?;
        arc.progressions.push(p);
    }
    arc.sort_progressions();
    commit(&state, &arc)?;
    Ok((StatusCode::CREATED, Json(arc)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcPatch {
    pub title: Option<String>,
    pub description: Option<String>,
    pub arc_type: Option<ArcType>,
    pub main_characters: Option<Vec<CharacterId>>,
}

pub async fn update(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(patch): Json<ArcPatch>,
) -> Result<Json<NarrativeArc>, ApiError> {
    let series = load_arc(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let mut arc = load_arc(&state, &id)?;
    if let Some(t) = patch.title {
        arc.title = t;
    }
    if let Some(d) = patch.description {
        arc.description = d;
    }
    if let Some(t) = patch.arc_type {
        arc.arc_type = t;
    }
    if let Some(m) = patch.main_characters {
        arc.main_characters = m;
    }
    commit(&state, &arc)?;
    Ok(Json(arc))
}

pub async fn delete(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<NarrativeArc>, ApiError> {
    let series = load_arc(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    Ok(Json(state.svc.memory.delete_arc(&ArcId::from_raw(id))?))
}

// --- merge -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRequest {
    pub keep_id: ArcId,
    pub absorb_id: ArcId,
}

/// Folds `absorb` into `keep`. Progressions in an episode both arcs cover
/// become one, keep's utterances first; main characters are unioned in
/// keep-first order; interfering characters that became main are dropped.
pub fn merge_arcs(keep: &NarrativeArc, absorb: &NarrativeArc) -> Result<NarrativeArc, ApiError> {
    let mut merged = keep.clone();
    for c in &absorb.main_characters {
        if !merged.main_characters.contains(c) {
            merged.main_characters.push(c.clone());
        }
    }
    for p in &absorb.progressions {
        match merged.progressions.iter_mut().find(|q| q.episode == p.episode) {
            Some(q) => {
                q.content.extend(p.content.iter().cloned());
                for c in &p.interfering_characters {
                    if !q.interfering_characters.contains(c) {
                        q.interfering_characters.push(c.clone());
                    }
                }
            }
            None => merged.progressions.push(Progression::new(
                merged.arc_id.clone(),
                merged.series.clone(),
                p.episode,
                p.content.clone(),
                p.interfering_characters.clone(),
            )?),
        }
    }
    let main = merged.main_characters.clone();
    for q in &mut merged.progressions {
        q.interfering_characters.retain(|c| !main.contains(c));
    }
    merged.sort_progressions();
    Ok(merged)
}

pub async fn merge(
    State(state): State<AppState>,
    Json(req): Json<MergeRequest>,
) -> Result<Json<NarrativeArc>, ApiError> {
    if req.keep_id == req.absorb_id {
        return Err(ApiError::conflict("MERGE_CONFLICT", "cannot merge an arc into itself"));
    }
    let series = load_arc(&state, req.keep_id.as_str())?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let keep = load_arc(&state, req.keep_id.as_str())?;
    let absorb = load_arc(&state, req.absorb_id.as_str())?;
    if keep.series != absorb.series {
        return Err(ApiError::conflict(
            "MERGE_CONFLICT",
            format!("arcs belong to {} and {}", keep.series, absorb.series),
        ));
    }
    let merged = merge_arcs(&keep, &absorb)?;
    // Validation runs before anything is written; the absorbed arc goes
    // only once the merged one is stored.
    commit(&state, &merged)?;
    state.svc.memory.delete_arc(&absorb.arc_id)?;
    Ok(Json(merged))
}

// --- progressions ----------------------------------------------------------

pub async fn add_progression(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<NewProgression>,
) -> Result<(StatusCode, Json<NarrativeArc>), ApiError> {
    let series = load_arc(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let mut arc = load_arc(&state, &id)?;
    if arc.progression_for(body.episode).is_some() {
        return Err(ApiError::conflict(
            "PROGRESSION_EXISTS",
            format!("arc already has a progression in {}", body.episode),
        ));
    }
    let p = build_progression(&arc, body)?;
    arc.progressions.push(p);
    arc.sort_progressions();
    commit(&state, &arc)?;
    Ok((StatusCode::CREATED, Json(arc)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgressionPatch {
    pub content: Option<Vec<String>>,
    pub interfering_characters: Option<Vec<CharacterId>>,
}

pub async fn update_progression(
    State(state): State<AppState>,
    Path((id, episode)): Path<(String, String)>,
    Json(patch): Json<ProgressionPatch>,
) -> Result<Json<NarrativeArc>, ApiError> {
    let episode = parse_episode(&episode)?;
    let series = load_arc(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let mut arc = load_arc(&state, &id)?;
    let p = arc
        .progressions
        .iter_mut()
        .find(|p| p.episode == episode)
        .ok_or_else(|| ApiError::not_found(format!("progression {episode} of arc {id}")))?;
    if let Some(c) = patch.content {
        p.content = c;
    }
    if let Some(i) = patch.interfering_characters {
        p.interfering_characters = i;
    }
    commit(&state, &arc)?;
    Ok(Json(arc))
}

pub async fn delete_progression(
    State(state): State<AppState>,
    Path((id, episode)): Path<(String, String)>,
) -> Result<Json<NarrativeArc>, ApiError> {
    let episode = parse_episode(&episode)?;
    let series = load_arc(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let mut arc = load_arc(&state, &id)?;
    if arc.progression_for(episode).is_none() {
        return Err(ApiError::not_found(format!("progression {episode} of arc {id}")));
    }
    if arc.progressions.len() == 1 {
        return Err(ApiError::conflict(
            "LAST_PROGRESSION",
            "an arc keeps at least one progression; delete the arc instead",
        ));
    }
    arc.progressions.retain(|p| p.episode != episode);
    commit(&state, &arc)?;
    Ok(Json(arc))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub episode: EpisodeKey,
}

/// A drafted progression; nothing is stored until the client posts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedProgression {
    pub arc_id: ArcId,
    pub episode: EpisodeKey,
    pub content: Vec<String>,
    pub main_characters: Vec<CharacterId>,
    pub interfering_characters: Vec<CharacterId>,
    /// Names the model used that match no stored character.
    pub unresolved_names: Vec<String>,
}

#[derive(Deserialize)]
struct Enhanced {
    main_characters: Vec<String>,
    interfering_characters: Vec<String>,
    utterances: Vec<String>,
}

pub async fn generate_progression(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<GenerateRequest>,
) -> Result<Json<GeneratedProgression>, ApiError> {
    let arc = load_arc(&state, &id)?;
    let doc = preprocess::load_document(state.svc.workspace(), &arc.series, req.episode)?;
    if doc.status != DocStatus::Normalized {
        return Err(ApiError::conflict(
            "NOT_NORMALIZED",
            format!("{} is not preprocessed", req.episode),
        ));
    }
    let svc = state.svc.clone();
    tokio::task::spawn_blocking(move || generate_blocking(&svc, &arc, &doc.normalized_plot(), req.episode))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "TASK", e.to_string()))?
        .map(Json)
}

fn generate_blocking(
    svc: &crate::services::Services,
    arc: &NarrativeArc,
    plot: &str,
    episode: EpisodeKey,
) -> Result<GeneratedProgression, ApiError> {
    let store = &svc.memory.relational;
    let names: Vec<String> = store
        .list_characters(&arc.series)?
        .into_iter()
        .map(|c| c.preferred_name)
        .collect();
    let v = vars([
        ("plot", plot.to_string()),
        ("title", arc.title.clone()),
        ("description", arc.description.clone()),
        ("arc_type", arc.arc_type.to_string()),
        ("characters", if names.is_empty() { "(none)".into() } else { names.join("; ") }),
        ("notes", "(none)".to_string()),
    ]);
    let (r, _): (Enhanced, _) = svc.gateway.complete_as(ids::AGENT6_ENHANCE, &v)?;
    let mut unresolved = Vec::new();
    let mut resolve = |list: &[String]| -> Result<Vec<CharacterId>, ApiError> {
        let mut out: Vec<CharacterId> = Vec::new();
        for n in list {
            match store.find_character_by_appellation(&arc.series, n)? {
                Some(c) if !out.contains(&c.character_id) => out.push(c.character_id),
                Some(_) => {}
                None => unresolved.push(n.clone()),
            }
        }
        Ok(out)
    };
    let main = resolve(&r.main_characters)?;
    let mut interfering = resolve(&r.interfering_characters)?;
    interfering.retain(|c| !main.contains(c));
    Ok(GeneratedProgression {
        arc_id: arc.arc_id.clone(),
        episode,
        content: r
            .utterances
            .into_iter()
            .map(|u| u.trim().to_string())
            .filter(|u| !u.is_empty())
            .collect(),
        main_characters: main,
        interfering_characters: interfering,
        unresolved_names: unresolved,
    })
}
