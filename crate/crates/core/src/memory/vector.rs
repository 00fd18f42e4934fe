//! Episodic vector store: unit-normalized embeddings of arc summaries,
//! progressions and (optionally) utterances, searched by exhaustive cosine
//! scan.
//!
//! On disk the store is two files: a JSON-lines metadata file and a sidecar
//! of packed little-endian `f32` vectors in the same record order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::similarity::{dot, l2_norm, normalized};
use super::MemoryError;
use crate::gateway::embed::EmbeddingProvider;
use crate::model::{derive_id, ArcId, EpisodeKey, IdKind, SeriesId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    ArcSummary,
    Progression,
    Utterance,
}

impl TargetKind {
    fn tag(&self) -> &'static str {
        match self {
            TargetKind::ArcSummary => "arc_summary",
            TargetKind::Progression => "progression",
            TargetKind::Utterance => "utterance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub record_id: String,
    pub target_kind: TargetKind,
    pub target_id: String,
    /// Owning arc, used by the `exclude_arc_id` filter.
    pub arc_id: Option<ArcId>,
    pub series: SeriesId,
    pub episode: Option<EpisodeKey>,
    #[serde(skip)]
    pub vector: Vec<f32>,
    pub text: String,
}

impl EmbeddingRecord {
    /// The record id is derived from `(target_kind, target_id)`, which makes
    /// upserts idempotent per target.
    pub fn new(
        target_kind: TargetKind,
        target_id: impl Into<String>,
        arc_id: Option<ArcId>,
        series: SeriesId,
        episode: Option<EpisodeKey>,
        vector: Vec<f32>,
        text: impl Into<String>,
    ) -> Self {
        let target_id = target_id.into();
        let record_id = record_id_for(&series, target_kind, &target_id);
        Self {
            record_id,
            target_kind,
            target_id,
            arc_id,
            series,
            episode,
            vector,
            text: text.into(),
        }
    }
}

pub fn record_id_for(series: &SeriesId, kind: TargetKind, target_id: &str) -> String {
    derive_id(IdKind::Embedding, series, &format!("{}/{}", kind.tag(), target_id))
        .expect("target id is never empty")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityHit {
    pub record: EmbeddingRecord,
    pub score: f64,
}

/// Upper bound on a record's episode. Records without an episode never pass
/// a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeBound {
    /// Strictly before the given episode.
    Before(EpisodeKey),
    /// At or before the given episode.
    UpTo(EpisodeKey),
}

impl EpisodeBound {
    pub fn admits(&self, episode: Option<EpisodeKey>) -> bool {
        match (self, episode) {
            (_, None) => false,
            (EpisodeBound::Before(max), Some(e)) => e < *max,
            (EpisodeBound::UpTo(max), Some(e)) => e <= *max,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    pub series: Option<SeriesId>,
    pub target_kind: Option<TargetKind>,
    pub exclude_arc_id: Option<ArcId>,
    pub max_episode: Option<EpisodeBound>,
}

impl QueryFilter {
    pub fn admits(&self, r: &EmbeddingRecord) -> bool {
        if let Some(s) = &self.series {
            if &r.series != s {
                return false;
            }
        }
        if let Some(k) = self.target_kind {
            if r.target_kind != k {
                return false;
            }
        }
        if let Some(a) = &self.exclude_arc_id {
            if r.arc_id.as_ref() == Some(a) {
                return false;
            }
        }
        if let Some(bound) = &self.max_episode {
            if !bound.admits(r.episode) {
                return false;
            }
        }
        true
    }
}

pub enum Query<'a> {
    Text(&'a str),
    Vector(&'a [f32]),
}

#[derive(Default)]
struct Inner {
    records: BTreeMap<String, EmbeddingRecord>,
}

#[derive(Debug, Clone)]
pub struct VectorPaths {
    pub metadata: PathBuf,
    pub vectors: PathBuf,
}

impl VectorPaths {
    /// `<base>.jsonl` and `<base>.f32`.
    pub fn from_base(base: &Path) -> Self {
        Self {
            metadata: base.with_extension("jsonl"),
            vectors: base.with_extension("f32"),
        }
    }
}

pub struct VectorStore {
    dimension: usize,
    inner: RwLock<Inner>,
    paths: Option<VectorPaths>,
}

struct Ranked {
    score: f64,
    record_id: String,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    /// "Better" ranks compare as smaller: higher score, then smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.record_id.cmp(&other.record_id))
    }
}

impl VectorStore {
    pub fn in_memory(dimension: usize) -> Result<Self, MemoryError> {
        if dimension < 2 {
            return Err(MemoryError::InvalidDimension(dimension));
        }
        Ok(Self {
            dimension,
            inner: RwLock::new(Inner::default()),
            paths: None,
        })
    }

    /// Opens (or creates) a persisted store. Loading checks every vector's
    /// dimension against `dimension`.
    pub fn open(paths: VectorPaths, dimension: usize) -> Result<Self, MemoryError> {
        let mut store = Self::in_memory(dimension)?;
        if paths.metadata.exists() {
            let records = read_records(&paths, dimension)?;
            let inner = store.inner.get_mut().expect("fresh lock");
            for r in records {
                inner.records.insert(r.record_id.clone(), r);
            }
        }
        store.paths = Some(paths);
        Ok(store)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.read().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().expect("vector store lock poisoned")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().expect("vector store lock poisoned")
    }

    /// Inserts or replaces the record for `(target_kind, target_id)`,
    /// normalizing its vector.
    pub fn upsert(&self, mut record: EmbeddingRecord) -> Result<String, MemoryError> {
        if record.vector.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                actual: record.vector.len(),
            });
        }
        record.vector = normalized(&record.vector)?;
        record.record_id = record_id_for(&record.series, record.target_kind, &record.target_id);
        let id = record.record_id.clone();
        self.write().records.insert(id.clone(), record);
        Ok(id)
    }

    pub fn get(&self, record_id: &str) -> Option<EmbeddingRecord> {
        self.read().records.get(record_id).cloned()
    }

    pub fn get_target(
        &self,
        series: &SeriesId,
        kind: TargetKind,
        target_id: &str,
    ) -> Option<EmbeddingRecord> {
        self.get(&record_id_for(series, kind, target_id))
    }

    /// Records passing `filter`, in record-id order.
    pub fn records(&self, filter: &QueryFilter) -> Vec<EmbeddingRecord> {
        self.read()
            .records
            .values()
            .filter(|r| filter.admits(r))
            .cloned()
            .collect()
    }

    /// Removes every record matching `pred`; returns how many were removed.
    pub fn remove_where(&self, pred: impl Fn(&EmbeddingRecord) -> bool) -> usize {
        let mut inner = self.write();
        let before = inner.records.len();
        inner.records.retain(|_, r| !pred(r));
        before - inner.records.len()
    }

    pub fn query_vector(
        &self,
        query: &[f32],
        k: usize,
        filter: &QueryFilter,
    ) -> Result<Vec<SimilarityHit>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        if query.len() != self.dimension {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let inner = self.read();
        if inner.records.is_empty() {
            return Ok(Vec::new());
        }
        let norm = l2_norm(query);
        if norm == 0.0 {
            return Err(MemoryError::ZeroVector);
        }
        // Max-heap on "worseness": the top is the worst of the current best k.
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for r in inner.records.values().filter(|r| filter.admits(r)) {
            let score = (dot(query, &r.vector) / norm).clamp(-1.0, 1.0);
            let cand = Ranked {
                score,
                record_id: r.record_id.clone(),
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let ranked = heap.into_sorted_vec();
        Ok(ranked
            .into_iter()
            .map(|r| SimilarityHit {
                record: inner.records[&r.record_id].clone(),
                score: r.score,
            })
            .collect())
    }

    pub fn query_similar(
        &self,
        query: Query<'_>,
        k: usize,
        filter: &QueryFilter,
        embedder: Option<&dyn EmbeddingProvider>,
    ) -> Result<Vec<SimilarityHit>, MemoryError> {
        match query {
            Query::Vector(v) => self.query_vector(v, k, filter),
            Query::Text(text) => {
                let embedder = embedder.ok_or(MemoryError::NoEmbedder)?;
                if k == 0 {
                    return Err(MemoryError::InvalidK);
                }
                if self.is_empty() {
                    return Ok(Vec::new());
                }
                let v = crate::gateway::embed::embed_texts(embedder, &[text.to_string()])?
                    .pop()
                    .expect("one vector per text");
                self.query_vector(&v, k, filter)
            }
        }
    }

    /// Writes both files when the store is persisted; no-op in memory.
    pub fn flush(&self) -> Result<(), MemoryError> {
        let Some(paths) = &self.paths else {
            return Ok(());
        };
        let inner = self.read();
        if let Some(dir) = paths.metadata.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp_meta = paths.metadata.with_extension("jsonl.tmp");
        let tmp_vec = paths.vectors.with_extension("f32.tmp");
        {
            let mut meta = BufWriter::new(fs::File::create(&tmp_meta)?);
            let mut vecs = BufWriter::new(fs::File::create(&tmp_vec)?);
            for r in inner.records.values() {
                serde_json::to_writer(&mut meta, r)?;
                meta.write_all(b"\n")?;
                for x in &r.vector {
                    vecs.write_all(&x.to_le_bytes())?;
                }
            }
            meta.flush()?;
            vecs.flush()?;
        }
        fs::rename(&tmp_meta, &paths.metadata)?;
        fs::rename(&tmp_vec, &paths.vectors)?;
        Ok(())
    }
}

fn read_records(paths: &VectorPaths, dimension: usize) -> Result<Vec<EmbeddingRecord>, MemoryError> {
    let meta = BufReader::new(fs::File::open(&paths.metadata)?);
    let raw = if paths.vectors.exists() {
        fs::read(&paths.vectors)?
    } else {
        Vec::new()
    };
    let stride = dimension * 4;
    let mut out = Vec::new();
    for (i, line) in meta.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut r: EmbeddingRecord = serde_json::from_str(&line)?;
        let start = out.len() * stride;
        let chunk = raw.get(start..start + stride).ok_or_else(|| {
            MemoryError::Corrupt(format!("vector sidecar too short at record {i}"))
        })?;
        r.vector = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(r);
    }
    if raw.len() != out.len() * stride {
        return Err(MemoryError::Corrupt(format!(
            "vector sidecar holds {} bytes for {} records of dimension {dimension}",
            raw.len(),
            out.len()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> SeriesId {
        SeriesId::new("harbor-general").unwrap()
    }

    fn rec(target: &str, v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord::new(TargetKind::ArcSummary, target, None, series(), None, v, target)
    }

    #[test]
    fn upsert_is_idempotent_per_target() {
        let store = VectorStore::in_memory(2).unwrap();
        store.upsert(rec("a", vec![1.0, 0.0])).unwrap();
        store.upsert(rec("a", vec![0.0, 1.0])).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn upsert_normalizes() {
        let store = VectorStore::in_memory(2).unwrap();
        let id = store.upsert(rec("a", vec![3.0, 4.0])).unwrap();
        let v = store.get(&id).unwrap().vector;
        assert!((v[0] - 0.6).abs() < 1e-7 && (v[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn upsert_rejects_wrong_dimension() {
        let store = VectorStore::in_memory(2).unwrap();
        assert!(matches!(
            store.upsert(rec("a", vec![1.0, 0.0, 0.0])),
            Err(MemoryError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert!(VectorStore::in_memory(1).is_err());
    }

    #[test]
    fn query_truncates_and_orders() {
        let store = VectorStore::in_memory(2).unwrap();
        store.upsert(rec("a", vec![1.0, 0.0])).unwrap();
        store.upsert(rec("b", vec![1.0, 1.0])).unwrap();
        store.upsert(rec("c", vec![0.0, 1.0])).unwrap();
        let hits = store
            .query_vector(&[1.0, 0.0], 10, &QueryFilter::default())
            .unwrap();
        let targets: Vec<&str> = hits.iter().map(|h| h.record.target_id.as_str()).collect();
        assert_eq!(targets, vec!["a", "b", "c"]);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_record_id() {
        let store = VectorStore::in_memory(2).unwrap();
        for t in ["x", "y", "z"] {
            store.upsert(rec(t, vec![1.0, 0.0])).unwrap();
        }
        let hits = store
            .query_vector(&[1.0, 0.0], 2, &QueryFilter::default())
            .unwrap();
        let mut ids: Vec<String> = store
            .records(&QueryFilter::default())
            .into_iter()
            .map(|r| r.record_id)
            .collect();
        ids.sort();
        assert_eq!(hits[0].record.record_id, ids[0]);
        assert_eq!(hits[1].record.record_id, ids[1]);
    }

    #[test]
    fn empty_store_returns_nothing() {
        let store = VectorStore::in_memory(2).unwrap();
        assert!(store
            .query_vector(&[1.0, 0.0], 3, &QueryFilter::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn episode_bound_filters() {
        let store = VectorStore::in_memory(2).unwrap();
        let e1 = EpisodeKey::new(1, 1).unwrap();
        let e2 = EpisodeKey::new(1, 2).unwrap();
        for (t, e) in [("early", Some(e1)), ("late", Some(e2)), ("none", None)] {
            let mut r = rec(t, vec![1.0, 0.0]);
            r.episode = e;
            store.upsert(r).unwrap();
        }
        let filter = QueryFilter {
            max_episode: Some(EpisodeBound::Before(e2)),
            ..Default::default()
        };
        let hits = store.query_vector(&[1.0, 0.0], 10, &filter).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].record.target_id, "early");
        let filter = QueryFilter {
            max_episode: Some(EpisodeBound::UpTo(e2)),
            ..Default::default()
        };
        assert_eq!(store.query_vector(&[1.0, 0.0], 10, &filter).unwrap().len(), 2);
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let paths = VectorPaths::from_base(&dir.path().join("vectors"));
        let store = VectorStore::open(paths.clone(), 3).unwrap();
        store.upsert(rec("a", vec![1.0, 2.0, 2.0])).unwrap();
        store.upsert(rec("b", vec![0.0, 0.0, 5.0])).unwrap();
        store.flush().unwrap();
        assert_eq!(fs::metadata(&paths.vectors).unwrap().len(), 2 * 3 * 4);
        let reopened = VectorStore::open(paths, 3).unwrap();
        assert_eq!(reopened.records(&QueryFilter::default()), store.records(&QueryFilter::default()));
    }
}
