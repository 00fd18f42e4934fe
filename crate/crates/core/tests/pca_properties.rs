//! PCA projection checked against an eigendecomposition of the covariance.

use arcmem_core::memory::analytics::project_rows_3d;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    // Distinct per-axis scales keep the leading eigenvalues well apart.
    (0..n)
        .map(|_| (0..d).map(|j| rng.gen_range(-1.0..1.0) * (d - j) as f64).collect())
        .collect()
}

fn column_variance(points: &[[f64; 3]], c: usize) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p[c]).sum::<f64>() / n;
    points.iter().map(|p| (p[c] - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn variances_match_covariance_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let (n, d) = (200, 24);
    let rows = random_rows(&mut rng, n, d);
    let points = project_rows_3d(&rows);
    assert_eq!(points.len(), n);

    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    for c in 0..3 {
        let lambda = eig.eigenvalues[order[c]];
        let var = column_variance(&points, c);
        assert!((var - lambda).abs() <= 1e-6 * lambda.max(1.0), "axis {c}: {var} vs {lambda}");
        // Coordinates equal the projection onto the eigenvector up to sign.
        let v = eig.eigenvectors.column(order[c]);
        for (i, p) in points.iter().enumerate() {
            let proj: f64 = x.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            assert!((p[c].abs() - proj.abs()).abs() < 1e-6, "point {i} axis {c}");
        }
    }
    assert!(column_variance(&points, 0) >= column_variance(&points, 1));
    assert!(column_variance(&points, 1) >= column_variance(&points, 2));
}

#[test]
fn translation_does_not_move_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = random_rows(&mut rng, 200, 16);
    let shift: Vec<f64> = (0..16).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let moved: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&shift).map(|(a, s)| a + s).collect())
        .collect();
    for (a, b) in project_rows_3d(&rows).iter().zip(project_rows_3d(&moved)) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() < 1e-6, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn rank_deficient_input_is_zero_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Single point: centered at the origin.
    assert_eq!(project_rows_3d(&[vec![3.0, -1.0, 2.0]]), vec![[0.0; 3]]);
    // Two points span one direction.
    for p in project_rows_3d(&[vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 5.0, 4.0]]) {
        assert_eq!((p[1], p[2]), (0.0, 0.0));
        assert!(p[0].abs() > 0.0);
    }
    // Points in a plane inside R^8.
    let a: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
    let b: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let (s, t): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            a.iter().zip(&b).map(|(x, y)| s * x + t * y + 1.0).collect()
        })
        .collect();
    let pts = project_rows_3d(&rows);
    assert!(pts.iter().all(|p| p[2] == 0.0));
    assert!(pts.iter().any(|p| p[1] != 0.0));
    // Identical points: everything at the origin.
    assert!(project_rows_3d(&vec![vec![2.0; 5]; 4]).iter().all(|p| *p == [0.0; 3]));
    // Fewer dimensions than three.
    let two_d: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen(), rng.gen()]).collect();
    assert!(project_rows_3d(&two_d).iter().all(|p| p[2] == 0.0));
}
