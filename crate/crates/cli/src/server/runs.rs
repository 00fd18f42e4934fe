//! Pipeline runs started over HTTP: a registry of runs, each with its
//! event log, streamed to clients as JSON lines.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use arcmem_core::gateway::GatewayMode;
use arcmem_core::pipeline::RunEvent;
use arcmem_core::SeriesId;
use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::Response;
use axum::Json;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use super::{ApiError, AppState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Running,
    Completed,
    Failed,
}

struct RunLog {
    phase: RunPhase,
    events: Vec<RunEvent>,
}

pub struct RunHandle {
    id: String,
    series: SeriesId,
    season: u32,
    mode: GatewayMode,
    log: Mutex<RunLog>,
    /// Bumped on every new event and on completion.
    notify: watch::Sender<u64>,
}

impl RunHandle {
    fn push(&self, event: RunEvent) {
        self.log.lock().expect("run log poisoned").events.push(event);
        self.notify.send_modify(|n| *n += 1);
    }

    fn finish(&self, phase: RunPhase) {
        self.log.lock().expect("run log poisoned").phase = phase;
        self.notify.send_modify(|n| *n += 1);
    }

    fn summary(&self) -> RunSummary {
        let log = self.log.lock().expect("run log poisoned");
        RunSummary {
            run_id: self.id.clone(),
            series: self.series.clone(),
            season: self.season,
            mode: self.mode,
            status: log.phase,
            events: log.events.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub series: SeriesId,
    pub season: u32,
    pub mode: GatewayMode,
    pub status: RunPhase,
    pub events: usize,
}

#[derive(Default)]
pub struct RunRegistry {
    next: AtomicU64,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
}

impl RunRegistry {
    pub fn get(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.runs.lock().expect("registry poisoned").get(id).cloned()
    }

    /// Registers a run unless the series already has one in progress.
    fn begin(&self, series: &SeriesId, season: u32, mode: GatewayMode) -> Result<Arc<RunHandle>, ApiError> {
        let mut runs = self.runs.lock().expect("registry poisoned");
        if let Some(active) = runs
            .values()
            .find(|r| &r.series == series && r.summary().status == RunPhase::Running)
        {
            return Err(ApiError::conflict(
                "RUN_ACTIVE",
                format!("run {} is still processing {series}", active.id),
            ));
        }
        let id = format!("run-{}", self.next.fetch_add(1, Ordering::Relaxed) + 1);
        let handle = Arc::new(RunHandle {
            id: id.clone(),
            series: series.clone(),
            season,
            mode,
            log: Mutex::new(RunLog {
                phase: RunPhase::Running,
                events: Vec::new(),
            }),
            notify: watch::channel(0).0,
        });
        runs.insert(id, handle.clone());
        Ok(handle)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub series: SeriesId,
    pub season: u32,
    /// Defaults to the server's configured mode.
    #[serde(default)]
    pub mode: Option<GatewayMode>,
    #[serde(default)]
    pub episode: Option<u32>,
    #[serde(default)]
    pub force: bool,
}

pub async fn start(
    State(state): State<AppState>,
    Json(req): Json<RunRequest>,
) -> Result<(StatusCode, Json<RunSummary>), ApiError> {
    let mode = req.mode.unwrap_or(state.svc.config.mode);
    let handle = state.runs.begin(&req.series, req.season, mode)?;
    let lock = state.series_lock(&req.series);
    let svc = state.svc.clone();
    let h = handle.clone();
    tokio::task::spawn_blocking(move || {
        let _guard = lock.blocking_lock();
        let gateway = svc.gateway_for(mode);
        let pipeline = svc.pipeline(&gateway);
        let result = pipeline.run_season(&req.series, req.season, req.episode, req.force, &mut |e| {
            h.push(e.clone())
        });
        match result {
            Ok(_) => h.finish(RunPhase::Completed),
            Err(e) => {
                let reported = matches!(
                    h.log.lock().expect("run log poisoned").events.last(),
                    Some(RunEvent::RunFailed { .. })
                );
                if !reported {
                    h.push(RunEvent::RunFailed {
                        series: req.series.clone(),
                        episode: None,
                        agent: None,
                        code: e.code().to_string(),
                        message: e.to_string(),
                    });
                }
                tracing::warn!(run = %h.id, error = %e, "pipeline run failed");
                h.finish(RunPhase::Failed);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(handle.summary())))
}

pub async fn summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<RunSummary>, ApiError> {
    let h = state
        .runs
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("run {id}")))?;
    Ok(Json(h.summary()))
}

/// Streams every event of the run from the start, one JSON object per
/// line, and ends when the run does.
pub async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let h = state
        .runs
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("run {id}")))?;
    let rx = h.notify.subscribe();
    let stream = futures::stream::unfold((h, rx, 0usize), |(h, mut rx, next)| async move {
        loop {
            {
                let log = h.log.lock().expect("run log poisoned");
                if let Some(e) = log.events.get(next) {
                    let mut line = serde_json::to_vec(e).expect("events serialize");
                    line.push(b'\n');
                    drop(log);
                    return Some((Ok::<_, Infallible>(Bytes::from(line)), (h, rx, next + 1)));
                }
                if log.phase != RunPhase::Running {
                    return None;
                }
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from_stream(stream))
        .expect("valid response"))
}
