//! Seeded inputs shared by the benchmarks.

use arcmem_core::memory::{EmbeddingRecord, TargetKind, VectorStore};
use arcmem_core::{EpisodeKey, SeriesId};
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform on the unit sphere.
pub fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// `n` progression records spread over ten episodes of one season.
pub fn random_store(rng: &mut impl Rng, n: usize, d: usize) -> VectorStore {
    let store = VectorStore::in_memory(d).expect("in-memory store");
    let series: SeriesId = "bench-show".parse().expect("valid slug");
    for i in 0..n {
        store
            .upsert(EmbeddingRecord::new(
                TargetKind::Progression,
                format!("t{i:05}"),
                None,
                series.clone(),
                Some(EpisodeKey::new(1, (i % 10) as u32 + 1).expect("valid key")),
                unit_vector(rng, d),
                format!("text {i}"),
            ))
            .expect("upsert");
    }
    store
}

pub fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}
