use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const C_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
pub const CV_FOLDS: usize = 10;
const ITERATIONS: usize = 2000;

/// Linear SVM in the original feature scale: `decision(x) = u . x + bias`,
/// label 1 when positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub u: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearSvm {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.u.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn predict(&self, row: &[f64]) -> u8 {
        u8::from(self.decision(row) > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmFit {
    pub svm: LinearSvm,
    pub cv_accuracy: f64,
    /// Mean CV accuracy of every grid value, in grid order.
    pub grid_accuracy: Vec<f64>,
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(values: &[f64], rows: &[usize], cols: usize) -> Self {
        let n = rows.len() as f64;
        let mut mean = vec![0.0; cols];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(&values[r * cols..(r + 1) * cols]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for &r in rows {
            for j in 0..cols {
                let d = values[r * cols + j] - mean[j];
                var[j] += d * d;
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let s = (v / n).sqrt();
                // constant columns carry no information
                if s > 1e-12 * m.abs().max(1.0) {
                    s
                } else {
                    0.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }
}

/// Full-batch Pegasos on standardized rows with a (regularized) bias feature;
/// returns the average of the second half of the iterates.
fn fit_standardized(z: &[Vec<f64>], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = z.len();
    let dim = z[0].len() + 1;
    let lambda = 1.0 / (c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let mut theta = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    let mut averaged = 0usize;
    let mut grad = vec![0.0; dim];
    for t in 1..=ITERATIONS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (row, &yi) in z.iter().zip(y) {
            let margin = yi * (row.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() + theta[dim - 1]);
            if margin < 1.0 {
                for (g, v) in grad.iter_mut().zip(row) {
                    *g += yi * v;
                }
                grad[dim - 1] += yi;
            }
        }
        let eta = 1.0 / (lambda * t as f64);
        let shrink = 1.0 - eta * lambda;
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th = shrink * *th + eta * g / n as f64;
        }
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            theta.iter_mut().for_each(|v| *v *= radius / norm);
        }
        if t > ITERATIONS / 2 {
            averaged += 1;
            for (a, th) in avg.iter_mut().zip(&theta) {
                *a += th;
            }
        }
    }
    avg.iter_mut().for_each(|a| *a /= averaged as f64);
    let b = avg.pop().unwrap_or_default();
    (avg, b)
}

/// Fit on the rows `train` of a row-major table; `labels` are 0/1.
pub fn fit(values: &[f64], cols: usize, labels: &[u8], train: &[usize], c: f64) -> LinearSvm {
    let std = Standardizer::fit(values, train, cols);
    let z: Vec<Vec<f64>> = train.iter().map(|&r| std.apply(&values[r * cols..(r + 1) * cols])).collect();
    let y: Vec<f64> = train.iter().map(|&r| if labels[r] == 1 { 1.0 } else { -1.0 }).collect();
    let (w, b) = fit_standardized(&z, &y, c);
    let u: Vec<f64> = w
        .iter()
        .zip(&std.scale)
        .map(|(w, s)| if *s > 0.0 { w / s } else { 0.0 })
        .collect();
    let bias = b - u.iter().zip(&std.mean).map(|(u, m)| u * m).sum::<f64>();
    LinearSvm { u, bias, c }
}

/// Fold id per row: each label's rows are shuffled (seeded) and dealt
/// round-robin, continuing the dealer position across labels.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for label in [0u8, 1] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == label).collect();
        rows.shuffle(&mut rng);
        for r in rows {
            assignment[r] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// Select C by mean stratified CV accuracy (ties to the smaller C), then refit on all rows.
pub fn train_svm(values: &[f64], rows: usize, cols: usize, labels: &[u8], seed: u64) -> Result<SvmFit> {
    if labels.len() != rows || values.len() != rows * cols {
        return Err(Error::precondition("table and labels disagree in size"));
    }
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::precondition("both domains must be present"));
    }
    if rows < CV_FOLDS {
        return Err(Error::precondition(format!("need at least {CV_FOLDS} rows, got {rows}")));
    }
    let all: Vec<usize> = (0..rows).collect();
    if Standardizer::fit(values, &all, cols).scale.iter().all(|&s| s == 0.0) {
        return Err(Error::precondition("all rows are identical"));
    }
    let folds = stratified_folds(labels, CV_FOLDS, seed);
    let grid_accuracy: Vec<f64> = C_GRID
        .iter()
        .map(|&c| {
            let mut accs = Vec::with_capacity(CV_FOLDS);
            for f in 0..CV_FOLDS {
                let (val, train): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&r| folds[r] == f);
                if val.is_empty() || train.is_empty() {
                    continue;
                }
                let svm = fit(values, cols, labels, &train, c);
                let correct = val
                    .iter()
                    .filter(|&&r| svm.predict(&values[r * cols..(r + 1) * cols]) == labels[r])
                    .count();
                accs.push(correct as f64 / val.len() as f64);
            }
            accs.iter().sum::<f64>() / accs.len() as f64
        })
        .collect();
    let mut best = 0;
    for i in 1..C_GRID.len() {
        if grid_accuracy[i] > grid_accuracy[best] {
            best = i;
        }
    }
    Ok(SvmFit {
        svm: fit(values, cols, labels, &all, C_GRID[best]),
        cv_accuracy: grid_accuracy[best],
        grid_accuracy,
    })
}
