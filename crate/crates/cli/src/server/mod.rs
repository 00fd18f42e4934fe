//! JSON-over-HTTP surface used by the console and by scripts.

mod analytics;
mod arcs;
mod characters;
mod error;
mod runs;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use arcmem_core::SeriesId;
use axum::routing::{get, patch, post};
use axum::{Json, Router};

use crate::error::CliError;
use crate::services::Services;

pub use error::ApiError;
pub use runs::{RunPhase, RunRegistry, RunSummary};

/// Shared handler state. Reads go straight to the stores; writes for one
/// series are serialized through that series' lock, which a pipeline run
/// also holds for its whole duration.
#[derive(Clone)]
pub struct AppState {
    pub svc: Arc<Services>,
    pub runs: Arc<RunRegistry>,
    locks: Arc<Mutex<HashMap<SeriesId, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    pub fn new(svc: Services) -> Self {
        Self {
            svc: Arc::new(svc),
            runs: Arc::new(RunRegistry::default()),
            locks: Arc::default(),
        }
    }

    pub fn series_lock(&self, series: &SeriesId) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(series.clone())
            .or_default()
            .clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/series", get(list_series))
        .route("/api/series/:series/seasons/:season/arcs", get(arcs::timeline))
        .route("/api/arcs", post(arcs::create))
        .route("/api/arcs/merge", post(arcs::merge))
        .route(
            "/api/arcs/:id",
            get(arcs::get_arc).patch(arcs::update).delete(arcs::delete),
        )
        .route("/api/arcs/:id/progressions", post(arcs::add_progression))
        .route(
            "/api/arcs/:id/progressions/generate",
            post(arcs::generate_progression),
        )
        .route(
            "/api/arcs/:id/progressions/:episode",
            patch(arcs::update_progression).delete(arcs::delete_progression),
        )
        .route("/api/series/:series/clusters", get(analytics::clusters))
        .route("/api/series/:series/pca", get(analytics::pca))
        .route("/api/series/:series/characters", get(characters::list))
        .route(
            "/api/series/:series/characters/duplicates",
            get(characters::duplicates),
        )
        .route("/api/characters/merge", post(characters::merge))
        .route("/api/characters/:id", patch(characters::update))
        .route("/api/pipeline/run", post(runs::start))
        .route("/api/pipeline/runs/:id", get(runs::summary))
        .route("/api/pipeline/runs/:id/events", get(runs::events))
        .with_state(state)
}

async fn list_series(
    axum::extract::State(state): axum::extract::State<AppState>,
) -> Result<Json<Vec<SeriesId>>, ApiError> {
    Ok(Json(state.svc.memory.relational.list_series()?))
}

/// Binds and serves until ctrl-c.
pub async fn serve(svc: Services) -> Result<(), CliError> {
    let bind = svc.config.bind.clone();
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| CliError::Server(format!("cannot bind {bind}: {e}")))?;
    tracing::info!(%bind, "listening");
    axum::serve(listener, router(AppState::new(svc)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
