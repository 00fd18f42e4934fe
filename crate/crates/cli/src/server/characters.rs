use arcmem_core::preprocess::suggest_duplicate_characters;
use arcmem_core::{Character, CharacterId, SeriesId};
use axum::extract::{Path, Query, State};
use axum::Json;
use serde::{Deserialize, Serialize};

use super::{ApiError, AppState};

fn parse_series(raw: &str) -> Result<SeriesId, ApiError> {
    raw.parse()
        .map_err(|e: arcmem_core::ModelError| ApiError::bad_request("BAD_SERIES", e.to_string()))
}

fn load(state: &AppState, id: &CharacterId) -> Result<Character, ApiError> {
    state
        .svc
        .memory
        .relational
        .find_character(id)?
        .ok_or_else(|| ApiError::not_found(format!("character {id}")))
}

pub async fn list(
    State(state): State<AppState>,
    Path(series): Path<String>,
) -> Result<Json<Vec<Character>>, ApiError> {
    let series = parse_series(&series)?;
    let mut out = state.svc.memory.relational.list_characters(&series)?;
    out.sort_by(|a, b| {
        a.preferred_name
            .cmp(&b.preferred_name)
            .then_with(|| a.character_id.cmp(&b.character_id))
    });
    Ok(Json(out))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterPatch {
    pub preferred_name: Option<String>,
    /// Replaces the appellation set; the preferred name is always kept.
    pub appellations: Option<Vec<String>>,
}

pub async fn update(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(patch): Json<CharacterPatch>,
) -> Result<Json<Character>, ApiError> {
    let id = CharacterId::from_raw(id);
    let series = load(&state, &id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    let current = load(&state, &id)?;
    let preferred = patch.preferred_name.unwrap_or(current.preferred_name);
    if preferred.trim().is_empty() {
        return Err(ApiError::bad_request("EMPTY_NAME", "preferred name is empty"));
    }
    let appellations = patch.appellations.unwrap_or(current.appellations);
    if appellations.iter().any(|a| a.trim().is_empty()) {
        return Err(ApiError::bad_request("EMPTY_NAME", "appellations must not be empty"));
    }
    let updated = Character::new(id, current.series, preferred, appellations);
    state.svc.memory.relational.save_character(&updated)?;
    Ok(Json(updated))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterMerge {
    pub keep_id: CharacterId,
    pub drop_id: CharacterId,
}

/// Folds one character into another; arc references are rewritten in the
/// same transaction.
pub async fn merge(
    State(state): State<AppState>,
    Json(req): Json<CharacterMerge>,
) -> Result<Json<Character>, ApiError> {
    let series = load(&state, &req.keep_id)?.series;
    let lock = state.series_lock(&series);
    let _guard = lock.lock().await;
    Ok(Json(
        state
            .svc
            .memory
            .relational
            .merge_characters(&req.keep_id, &req.drop_id)?,
    ))
}

#[derive(Debug, Default, Deserialize)]
pub struct DuplicateQuery {
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub first: Character,
    pub second: Character,
    pub score: f64,
}

pub async fn duplicates(
    State(state): State<AppState>,
    Path(series): Path<String>,
    Query(q): Query<DuplicateQuery>,
) -> Result<Json<Vec<DuplicatePair>>, ApiError> {
    let series = parse_series(&series)?;
    let threshold = q.threshold.unwrap_or(state.svc.config.jaccard_threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ApiError::bad_request(
            "INVALID_THRESHOLD",
            format!("threshold {threshold} outside [0, 1]"),
        ));
    }
    let store = &state.svc.memory.relational;
    let pairs = suggest_duplicate_characters(store, &series, threshold)?;
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        out.push(DuplicatePair {
            first: load(&state, &p.first)?,
            second: load(&state, &p.second)?,
            score: p.score,
        });
    }
    Ok(Json(out))
}
