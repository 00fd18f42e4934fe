use std::collections::BTreeSet;

use super::MemoryError;

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub fn l2_norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64, MemoryError> {
    if a.len() != b.len() {
        return Err(MemoryError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Returns a unit-length copy of `v`.
pub fn normalized(v: &[f32]) -> Result<Vec<f32>, MemoryError> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(MemoryError::ZeroVector);
    }
    Ok(v.iter().map(|x| (f64::from(*x) / n) as f32).collect())
}

/// |a ∩ b| / |a ∪ b|, defined as 1.0 when both sets are empty.
pub fn jaccard_similarity<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}
