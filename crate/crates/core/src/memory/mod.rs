//! Long-term memory: the relational store for structured arc and character
//! data plus the episodic vector store, kept consistent by [`MemoryStore`].

pub mod analytics;
pub mod relational;
pub mod similarity;
pub mod vector;

use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::embed::{embed_texts, EmbedError, EmbeddingProvider};
use crate::model::{
    validate_arc, ArcId, CharacterId, NarrativeArc, Violation, ViolationCode,
};

pub use analytics::{cluster_embeddings, pca_project_3d, ClusterAssignment, PcaPoint};
pub use relational::{ArcListFilter, RelationalStore};
pub use similarity::{cosine_similarity, jaccard_similarity};
pub use vector::{
    EmbeddingRecord, EpisodeBound, Query, QueryFilter, SimilarityHit, TargetKind, VectorPaths,
    VectorStore,
};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("distance threshold {0} outside (0, 2)")]
    InvalidThreshold(f64),
    #[error("text queries need an embedding provider")]
    NoEmbedder,
    #[error("unknown arc {0}")]
    UnknownArc(ArcId),
    #[error("unknown character {0}")]
    UnknownCharacter(CharacterId),
    #[error("arc references unknown characters: {0:?}")]
    DanglingCharacters(Vec<CharacterId>),
    #[error("appellation {appellation:?} already belongs to {owner}")]
    AppellationTaken {
        appellation: String,
        owner: CharacterId,
    },
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("arc fails validation: {}", codes(.0))]
    Invalid(Vec<Violation>),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("sqlite: {0}")]
    Sql(#[from] rusqlite::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn codes(v: &[Violation]) -> String {
    v.iter().map(|v| v.code.as_str()).collect::<Vec<_>>().join(", ")
}

impl MemoryError {
    pub fn code(&self) -> &'static str {
        match self {
            MemoryError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            MemoryError::ZeroVector => "ZERO_VECTOR",
            MemoryError::InvalidDimension(_) => "INVALID_DIMENSION",
            MemoryError::InvalidK => "INVALID_K",
            MemoryError::InvalidThreshold(_) => "INVALID_THRESHOLD",
            MemoryError::NoEmbedder => "NO_EMBEDDER",
            MemoryError::UnknownArc(_) => "UNKNOWN_ARC",
            MemoryError::UnknownCharacter(_) => "UNKNOWN_CHARACTER",
            MemoryError::DanglingCharacters(_) => "UNKNOWN_CHARACTER",
            MemoryError::AppellationTaken { .. } => "APPELLATION_TAKEN",
            MemoryError::Conflict(_) => "CONFLICT",
            MemoryError::Invalid(_) => "VALIDATION",
            MemoryError::Corrupt(_) => "CORRUPT_STORE",
            MemoryError::Embedding(e) => e.code(),
            MemoryError::Sql(_) => "STORAGE",
            MemoryError::Io(_) => "IO",
            MemoryError::Json(_) => "JSON",
        }
    }
}

#[derive(Debug, Clone)]
pub struct MemoryPaths {
    pub relational: PathBuf,
    /// Base path; the store writes `<base>.jsonl` and `<base>.f32`.
    pub vectors: PathBuf,
}

/// Relational and vector stores behind one consistency boundary: arc
/// writes go to both, arc deletes cascade into both.
pub struct MemoryStore {
    pub relational: RelationalStore,
    pub vectors: VectorStore,
    embed_utterances: bool,
}

impl MemoryStore {
    pub fn open(paths: &MemoryPaths, dimension: usize) -> Result<Self, MemoryError> {
        Ok(Self {
            relational: RelationalStore::open(&paths.relational)?,
            vectors: VectorStore::open(VectorPaths::from_base(&paths.vectors), dimension)?,
            embed_utterances: false,
        })
    }

    pub fn in_memory(dimension: usize) -> Result<Self, MemoryError> {
        Ok(Self {
            relational: RelationalStore::in_memory()?,
            vectors: VectorStore::in_memory(dimension)?,
            embed_utterances: false,
        })
    }

    /// Also embed each utterance as its own record (off by default).
    pub fn with_utterance_embeddings(mut self, on: bool) -> Self {
        self.embed_utterances = on;
        self
    }

    /// Structural validation plus character existence.
    pub fn validate_arc_in_store(&self, arc: &NarrativeArc) -> Result<Vec<Violation>, MemoryError> {
        let mut out = validate_arc(arc);
        for id in self.relational.missing_characters(arc.character_refs())? {
            out.push(Violation::new(
                ViolationCode::UnknownCharacter,
                format!("character {id} does not exist"),
            ));
        }
        Ok(out)
    }

    /// Validates, embeds and saves an arc. Embeddings are computed before
    /// anything is written, so a failure leaves both stores untouched.
    pub fn commit_arc(
        &self,
        arc: &NarrativeArc,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<(), MemoryError> {
        let violations = self.validate_arc_in_store(arc)?;
        if !violations.is_empty() {
            return Err(MemoryError::Invalid(violations));
        }
        let records = self.embedding_records(arc, embedder)?;
        for r in &records {
            if r.vector.len() != self.vectors.dimension() {
                return Err(MemoryError::DimensionMismatch {
                    expected: self.vectors.dimension(),
                    actual: r.vector.len(),
                });
            }
        }
        self.relational.save_arc(arc)?;
        self.replace_embeddings(&arc.arc_id, records)?;
        self.vectors.flush()
    }

    fn embedding_records(
        &self,
        arc: &NarrativeArc,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Vec<EmbeddingRecord>, MemoryError> {
        let mut specs: Vec<(TargetKind, String, Option<crate::model::EpisodeKey>, String)> = vec![(
            TargetKind::ArcSummary,
            arc.arc_id.as_str().to_string(),
            arc.first_episode(),
            arc.summary_text(),
        )];
        for p in &arc.progressions {
            specs.push((
                TargetKind::Progression,
                p.progression_id.as_str().to_string(),
                Some(p.episode),
                p.content.join(" "),
            ));
            if self.embed_utterances {
                for u in p.utterances() {
                    specs.push((
                        TargetKind::Utterance,
                        format!("{}#{}", p.progression_id, u.ordinal),
                        Some(p.episode),
                        u.text,
                    ));
                }
            }
        }
        let texts: Vec<String> = specs.iter().map(|s| s.3.clone()).collect();
        let vectors = embed_texts(embedder, &texts)?;
        Ok(specs
            .into_iter()
            .zip(vectors)
            .map(|((kind, target, episode, text), v)| {
                EmbeddingRecord::new(kind, target, Some(arc.arc_id.clone()), arc.series.clone(), episode, v, text)
            })
            .collect())
    }

    fn replace_embeddings(
        &self,
        arc_id: &ArcId,
        records: Vec<EmbeddingRecord>,
    ) -> Result<(), MemoryError> {
        self.vectors
            .remove_where(|r| r.arc_id.as_ref() == Some(arc_id));
        for r in records {
            self.vectors.upsert(r)?;
        }
        Ok(())
    }

    /// Re-embeds an arc already saved in the relational store.
    pub fn refresh_embeddings(
        &self,
        arc_id: &ArcId,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<(), MemoryError> {
        let arc = self.relational.load_arc(arc_id)?;
        let records = self.embedding_records(&arc, embedder)?;
        self.replace_embeddings(arc_id, records)?;
        self.vectors.flush()
    }

    /// Deletes an arc, its progressions and every embedding it owns.
    pub fn delete_arc(&self, arc_id: &ArcId) -> Result<NarrativeArc, MemoryError> {
        let arc = self.relational.delete_arc(arc_id)?;
        self.vectors.remove_where(|r| r.arc_id.as_ref() == Some(arc_id));
        self.vectors.flush()?;
        Ok(arc)
    }

    pub fn flush(&self) -> Result<(), MemoryError> {
        self.vectors.flush()
    }
}
