//! Independent reference computations for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cbir_core::{EmbeddingMatrix, Matrix};

pub fn gaussian_matrix(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // anisotropic columns so the spectrum is well spread
    let data = (0..n * d)
        .map(|k| {
            let z: f64 = rng.sample(StandardNormal);
            (z * (1.0 + (k % d) as f64 * 0.25)) as f32
        })
        .collect();
    Matrix::new(n, d, data).unwrap()
}

/// Sample covariance (denominator n − 1) in f64.
pub fn covariance(data: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    let (n, d) = (data.count(), data.dim());
    let mut mean = vec![0.0; d];
    for r in data.rows() {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += f64::from(v) / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in data.rows() {
        for i in 0..d {
            let xi = f64::from(r[i]) - mean[i];
            for j in 0..d {
                cov[i][j] += xi * (f64::from(r[j]) - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    cov
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors as columns)` sorted by descending eigenvalue.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&k| a[k][k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|i| v[i][k]).collect()).collect();
    (values, vectors)
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

pub fn l2sq64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum()
}

/// Full sort of `(distance, id)` over `ids`, truncated to `scope`.
pub fn sort_oracle(
    features: &EmbeddingMatrix,
    query: &[f32],
    l1: bool,
    scope: usize,
    ids: impl IntoIterator<Item = usize>,
) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = ids
        .into_iter()
        .map(|i| {
            let d = features
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| {
                    let x = f64::from(*a) - f64::from(*b);
                    if l1 { x.abs() } else { x * x }
                })
                .sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(scope).map(|(d, i)| (i, d)).collect()
}

/// Class ids by descending probability, ties by id (full sort).
pub fn class_ranking(probs: &[f32]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    ids
}
