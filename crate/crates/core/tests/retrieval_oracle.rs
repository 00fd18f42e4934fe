//! query_similar against a brute-force scan over the same stored vectors.

use std::time::Instant;

use arcmem_core::memory::{EmbeddingRecord, EpisodeBound, Query, QueryFilter, TargetKind, VectorStore};
use arcmem_core::{EpisodeKey, SeriesId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Uniform on the unit sphere.
fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

const D: usize = 256;

fn oracle(store: &VectorStore, q: &[f32], k: usize, filter: &QueryFilter) -> Vec<(String, f64)> {
    let qn = q.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = store
        .records(&QueryFilter::default())
        .into_iter()
        .filter(|r| filter.admits(r))
        .map(|r| {
            let dot: f64 = q.iter().zip(&r.vector).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            (r.record_id, (dot / qn).clamp(-1.0, 1.0))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn seeded_store(rng: &mut ChaCha8Rng, n: usize) -> VectorStore {
    let store = VectorStore::in_memory(D).unwrap();
    let series: SeriesId = "oracle-show".parse().unwrap();
    for i in 0..n {
        let ep = EpisodeKey::new(1, (i % 10) as u32 + 1).unwrap();
        store
            .upsert(EmbeddingRecord::new(
                TargetKind::Progression,
                format!("t{i:04}"),
                None,
                series.clone(),
                Some(ep),
                unit_vector(rng, D),
                format!("text {i}"),
            ))
            .unwrap();
    }
    store
}

#[test]
fn top_k_equals_exhaustive_scan() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let store = seeded_store(&mut rng, 1000);
    assert_eq!(store.len(), 1000);
    for _ in 0..100 {
        let q = unit_vector(&mut rng, D);
        let got = store
            .query_similar(Query::Vector(&q), 10, &QueryFilter::default(), None)
            .unwrap();
        let want = oracle(&store, &q, 10, &QueryFilter::default());
        let got_ids: Vec<&str> = got.iter().map(|h| h.record.record_id.as_str()).collect();
        let want_ids: Vec<&str> = want.iter().map(|w| w.0.as_str()).collect();
        assert_eq!(got_ids, want_ids);
        for (h, w) in got.iter().zip(&want) {
            assert!((h.score - w.1).abs() < 1e-12);
        }
    }
    assert!(started.elapsed().as_secs_f64() < 10.0, "took {:?}", started.elapsed());
}

#[test]
fn filtered_top_k_equals_filtered_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let store = seeded_store(&mut rng, 300);
    for i in 0..30 {
        let bound = EpisodeKey::new(1, rng.gen_range(1..=10)).unwrap();
        let filter = QueryFilter {
            max_episode: Some(if i % 2 == 0 {
                EpisodeBound::Before(bound)
            } else {
                EpisodeBound::UpTo(bound)
            }),
            ..Default::default()
        };
        let q = unit_vector(&mut rng, D);
        let k = rng.gen_range(1..=25);
        let got: Vec<String> = store
            .query_vector(&q, k, &filter)
            .unwrap()
            .into_iter()
            .map(|h| {
                assert!(filter.max_episode.unwrap().admits(h.record.episode));
                h.record.record_id
            })
            .collect();
        let want: Vec<String> = oracle(&store, &q, k, &filter).into_iter().map(|w| w.0).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn k_larger_than_store_returns_everything_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let store = seeded_store(&mut rng, 12);
    let q = unit_vector(&mut rng, D);
    let got = store.query_vector(&q, 50, &QueryFilter::default()).unwrap();
    assert_eq!(got.len(), 12);
    assert!(got.windows(2).all(|w| w[0].score >= w[1].score));
}
