use std::collections::{BTreeMap, BTreeSet};

use arcmem_core::memory::{
    cluster_embeddings, pca_project_3d, ArcListFilter, ClusterAssignment, EmbeddingRecord,
    QueryFilter, TargetKind,
};
use arcmem_core::{ArcId, ArcType, SeriesId};
use axum::extract::{Path, Query, State};
use axum::Json;
use serde::{Deserialize, Serialize};

use super::{ApiError, AppState};

#[derive(Debug, Default, Deserialize)]
pub struct AnalyticsQuery {
    /// Cosine distance cut for clustering; the configured default if absent.
    pub threshold: Option<f64>,
    /// Restricts to arcs (or progression records) of one season.
    pub season: Option<u32>,
    /// `arc_summary` (default), `progression` or `utterance`.
    pub kind: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordInfo {
    pub record_id: String,
    pub arc_id: Option<ArcId>,
    pub title: Option<String>,
    pub arc_type: Option<ArcType>,
    pub text: String,
}

fn records(state: &AppState, series: &str, q: &AnalyticsQuery) -> Result<(Vec<EmbeddingRecord>, Vec<RecordInfo>), ApiError> {
    let series: SeriesId = series
        .parse()
        .map_err(|e: arcmem_core::ModelError| ApiError::bad_request("BAD_SERIES", e.to_string()))?;
    let kind: TargetKind = match q.kind.as_deref() {
        None | Some("") => TargetKind::ArcSummary,
        Some(k) => serde_json::from_value(serde_json::Value::String(k.to_string()))
            .map_err(|_| ApiError::bad_request("BAD_KIND", format!("unknown record kind {k:?}")))?,
    };
    let arcs: BTreeMap<ArcId, (String, ArcType, BTreeSet<u32>)> = state
        .svc
        .memory
        .relational
        .list_arcs(&ArcListFilter {
            series: Some(series.clone()),
            ..Default::default()
        })?
        .into_iter()
        .map(|a| {
            let seasons = a.progressions.iter().map(|p| p.episode.season()).collect();
            (a.arc_id, (a.title, a.arc_type, seasons))
        })
        .collect();
    let mut recs = state.svc.memory.vectors.records(&QueryFilter {
        series: Some(series),
        target_kind: Some(kind),
        ..Default::default()
    });
    if let Some(season) = q.season {
        recs.retain(|r| match kind {
            TargetKind::ArcSummary => r
                .arc_id
                .as_ref()
                .and_then(|a| arcs.get(a))
                .is_some_and(|(_, _, seasons)| seasons.contains(&season)),
            _ => r.episode.is_some_and(|e| e.season() == season),
        });
    }
    recs.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let info = recs
        .iter()
        .map(|r| {
            let arc = r.arc_id.as_ref().and_then(|a| arcs.get(a));
            RecordInfo {
                record_id: r.record_id.clone(),
                arc_id: r.arc_id.clone(),
                title: arc.map(|a| a.0.clone()),
                arc_type: arc.map(|a| a.1),
                text: r.text.clone(),
            }
        })
        .collect();
    Ok((recs, info))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterResponse {
    pub threshold: f64,
    pub clusters: Vec<ClusterAssignment>,
    pub records: Vec<RecordInfo>,
}

pub async fn clusters(
    State(state): State<AppState>,
    Path(series): Path<String>,
    Query(q): Query<AnalyticsQuery>,
) -> Result<Json<ClusterResponse>, ApiError> {
    let threshold = q.threshold.unwrap_or(state.svc.config.cluster_threshold);
    let (recs, info) = records(&state, &series, &q)?;
    Ok(Json(ClusterResponse {
        threshold,
        clusters: cluster_embeddings(&recs, threshold)?,
        records: info,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PcaEntry {
    #[serde(flatten)]
    pub record: RecordInfo,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub async fn pca(
    State(state): State<AppState>,
    Path(series): Path<String>,
    Query(q): Query<AnalyticsQuery>,
) -> Result<Json<Vec<PcaEntry>>, ApiError> {
    let (recs, info) = records(&state, &series, &q)?;
    Ok(Json(
        pca_project_3d(&recs)
            .into_iter()
            .zip(info)
            .map(|(p, record)| PcaEntry {
                record,
                x: p.x,
                y: p.y,
                z: p.z,
            })
            .collect(),
    ))
}
