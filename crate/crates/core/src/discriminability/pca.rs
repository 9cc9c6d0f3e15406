use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const POWER_TOLERANCE: f64 = 1e-9;
const POWER_MAX_ITER: usize = 100_000;

/// Column means of a row-major `rows x cols` matrix.
pub fn column_means(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(&values[r * cols..(r + 1) * cols]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    mean
}

/// Sample covariance of the columns.
pub fn covariance(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mean = column_means(values, rows, cols);
    let mut cov = vec![0.0; cols * cols];
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let di = row[i] - mean[i];
            for j in i..cols {
                cov[i * cols + j] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (rows.max(2) - 1) as f64;
    for i in 0..cols {
        for j in i..cols {
            let v = cov[i * cols + j] / denom;
            cov[i * cols + j] = v;
            cov[j * cols + i] = v;
        }
    }
    cov
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flip so the entry of largest magnitude is positive (lowest index on ties).
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Leading eigenvector of a symmetric PSD matrix by power iteration, with its eigenvalue.
pub fn leading_eigenvector(m: &[f64], n: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    normalize(&mut v);
    for _ in 0..POWER_MAX_ITER {
        let mut next = mat_vec(m, &v);
        if normalize(&mut next) == 0.0 {
            return Err(Error::precondition("matrix has no variance to decompose"));
        }
        fix_sign(&mut next);
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    let mv = mat_vec(m, &v);
    let lambda = mv.iter().zip(&v).map(|(a, b)| a * b).sum();
    Ok((v, lambda))
}

/// First principal component of the rows of a `rows x cols` table (unit norm).
pub fn first_principal_component(values: &[f64], rows: usize, cols: usize, seed: u64) -> Result<Vec<f64>> {
    let cov = covariance(values, rows, cols);
    leading_eigenvector(&cov, cols, seed).map(|(g, _)| g)
}
