//! Embedding analytics for the vector explorer: 3D PCA projection and
//! average-linkage agglomerative clustering under cosine distance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::similarity::cosine_similarity;
use super::vector::EmbeddingRecord;
use super::MemoryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub record_id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Relative singular-value cutoff below which a component counts as
/// degenerate and its coordinate is padded with zero.
const DEGENERATE_RATIO: f64 = 1e-9;

pub fn pca_project_3d(records: &[EmbeddingRecord]) -> Vec<PcaPoint> {
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.vector.iter().map(|x| f64::from(*x)).collect())
        .collect();
    project_rows_3d(&rows)
        .into_iter()
        .zip(records)
        .map(|(c, r)| PcaPoint {
            record_id: r.record_id.clone(),
            x: c[0],
            y: c[1],
            z: c[2],
        })
        .collect()
}

/// Mean-centers `rows` and projects them onto the top three principal
/// components. Each component's largest-magnitude loading is made positive.
pub fn project_rows_3d(rows: &[Vec<f64>]) -> Vec<[f64; 3]> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    if n == 1 || d == 0 {
        return vec![[0.0; 3]; n];
    }

    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let s_max = order
        .first()
        .map(|&i| svd.singular_values[i])
        .unwrap_or(0.0);

    let mut out = vec![[0.0; 3]; n];
    for (slot, &ci) in order.iter().take(3).enumerate() {
        let s = svd.singular_values[ci];
        if s_max <= 0.0 || s <= DEGENERATE_RATIO * s_max {
            continue;
        }
        let mut axis: Vec<f64> = v_t.row(ci).iter().copied().collect();
        let pivot = axis
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, x)| {
                if x.abs() > best.1 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        if axis[pivot] < 0.0 {
            for a in &mut axis {
                *a = -*a;
            }
        }
        for (i, point) in out.iter_mut().enumerate() {
            point[slot] = centered.row(i).iter().zip(&axis).map(|(x, a)| x * a).sum();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    pub member_ids: Vec<String>,
}

/// Average-linkage agglomerative clustering on cosine distance. Merging
/// stops once the closest pair of clusters is farther apart than
/// `distance_threshold`. Among equally close pairs, the pair whose smallest
/// member ids sort first is merged.
pub fn cluster_embeddings(
    records: &[EmbeddingRecord],
    distance_threshold: f64,
) -> Result<Vec<ClusterAssignment>, MemoryError> {
    if !(distance_threshold > 0.0 && distance_threshold < 2.0) {
        return Err(MemoryError::InvalidThreshold(distance_threshold));
    }
    let mut sorted: Vec<&EmbeddingRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let n = sorted.len();

    let mut dist = vec![vec![0.0_f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = 1.0 - cosine_similarity(&sorted[i].vector, &sorted[j].vector)?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    // Cluster slots are indexed by their smallest member, which is also the
    // lexicographically smallest record id since `sorted` is ordered.
    let mut members: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            if members[a].is_none() {
                continue;
            }
            for b in (a + 1)..n {
                if members[b].is_none() {
                    continue;
                }
                let d = dist[a][b];
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d > distance_threshold {
            break;
        }
        let size_a = members[a].as_ref().map_or(0, Vec::len) as f64;
        let size_b = members[b].as_ref().map_or(0, Vec::len) as f64;
        // Lance-Williams update for average linkage.
        for k in 0..n {
            if k == a || k == b || members[k].is_none() {
                continue;
            }
            let merged = (size_a * dist[a][k] + size_b * dist[b][k]) / (size_a + size_b);
            dist[a][k] = merged;
            dist[k][a] = merged;
        }
        let absorbed = members[b].take().unwrap_or_default();
        if let Some(m) = members[a].as_mut() {
            m.extend(absorbed);
            m.sort_unstable();
        }
    }

    Ok(members
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(cluster_id, m)| ClusterAssignment {
            cluster_id,
            member_ids: m.into_iter().map(|i| sorted[i].record_id.clone()).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::vector::TargetKind;
    use crate::model::SeriesId;

    fn rec(id: &str, v: &[f32]) -> EmbeddingRecord {
        let mut r = EmbeddingRecord::new(
            TargetKind::ArcSummary,
            id,
            None,
            SeriesId::new("s").unwrap(),
            None,
            v.to_vec(),
            id,
        );
        r.record_id = id.to_string();
        r
    }

    #[test]
    fn singleton_projects_to_origin() {
        let pts = pca_project_3d(&[rec("a", &[0.3, 0.4, 0.5])]);
        assert_eq!((pts[0].x, pts[0].y, pts[0].z), (0.0, 0.0, 0.0));
    }

    #[test]
    fn planar_points_have_zero_depth() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let (a, b) = (i as f64, (i * i) as f64 % 7.0);
                vec![a + b, a - b, 2.0 * a, 0.5 * b]
            })
            .collect();
        for p in project_rows_3d(&rows) {
            assert!(p[2].abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn two_points_only_use_first_axis() {
        let pts = project_rows_3d(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert!(pts[0][0].abs() > 0.1);
        assert_eq!(pts[0][1], 0.0);
        assert_eq!(pts[1][2], 0.0);
    }

    #[test]
    fn identical_vectors_share_a_cluster() {
        let c = cluster_embeddings(&[rec("a", &[1.0, 0.0]), rec("b", &[1.0, 0.0])], 0.3).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].member_ids, vec!["a", "b"]);
    }

    #[test]
    fn orthogonal_vectors_stay_apart() {
        let c = cluster_embeddings(&[rec("a", &[1.0, 0.0]), rec("b", &[0.0, 1.0])], 0.3).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1].cluster_id, 1);
    }

    #[test]
    fn threshold_must_be_in_open_interval() {
        assert!(cluster_embeddings(&[], 0.0).is_err());
        assert!(cluster_embeddings(&[], 2.0).is_err());
        assert!(cluster_embeddings(&[], 1.0).unwrap().is_empty());
    }
}
