//! Exact t-SNE for the instance view.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Domain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            seed: 0,
        }
    }
}

pub const ENTROPY_TOLERANCE: f64 = 1e-5;
pub const BISECTION_STEPS: usize = 50;
const INIT_SIGMA: f64 = 1e-4;

/// Largest perplexity accepted for `m` points.
pub fn max_perplexity(m: usize) -> f64 {
    (m as f64 - 1.0) / 3.0
}

pub fn squared_distances(vectors: &[f32], n: usize, dim: usize) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &vectors[i * dim..(i + 1) * dim];
            (0..n).map(move |j| {
                let b = &vectors[j * dim..(j + 1) * dim];
                a.iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let d = f64::from(*x) - f64::from(*y);
                        d * d
                    })
                    .sum::<f64>()
            })
        })
        .collect()
}

/// Conditional affinities `p_{j|i}` for one row and their perplexity.
fn conditional_row(dist: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let d0 = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { (-beta * (d - d0)).exp() })
        .collect();
    let z: f64 = p.iter().sum();
    let weighted: f64 = p.iter().zip(dist).map(|(pj, d)| pj * (d - d0)).sum();
    let entropy = z.ln() + beta * weighted / z;
    p.iter_mut().for_each(|v| *v /= z);
    (p, entropy)
}

pub struct Affinities {
    /// Symmetrized joint probabilities, row-major `n x n`, summing to 1.
    pub p: Vec<f64>,
    /// Perplexity reached for each point.
    pub perplexities: Vec<f64>,
}

pub fn input_affinities(dist: &[f64], n: usize, perplexity: f64) -> Affinities {
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let (mut beta, mut lo, mut hi) = (1.0f64, 0.0f64, f64::INFINITY);
            let (mut p, mut h) = conditional_row(row, i, beta);
            for _ in 0..BISECTION_STEPS {
                let diff = h - target;
                if diff.abs() < ENTROPY_TOLERANCE {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                (p, h) = conditional_row(row, i, beta);
            }
            (p, h.exp())
        })
        .collect();
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
        }
    }
    Affinities {
        p: joint,
        perplexities: rows.iter().map(|r| r.1).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneOutput {
    pub coordinates: Vec<[f64; 2]>,
    pub kl: f64,
    pub kl_after_exaggeration: f64,
    /// Largest deviation of a point's perplexity from the requested value.
    pub perplexity_error: f64,
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let num = student_kernel(y);
    let z: f64 = num.iter().sum();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j];
            if i != j && pij > 0.0 {
                let q = (num[i * n + j] / z).max(1e-300);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn student_kernel(y: &[[f64; 2]]) -> Vec<f64> {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
        }
    }
    num
}

/// Exact t-SNE of `n` row vectors of length `dim`.
pub fn tsne(vectors: &[f32], n: usize, dim: usize, cfg: &TsneConfig) -> Result<TsneOutput> {
    if vectors.len() != n * dim {
        return Err(Error::ShapeMismatch {
            expected: vec![n, dim],
            actual: vec![vectors.len()],
        });
    }
    if n < 10 {
        return Err(Error::precondition(format!("t-SNE needs at least 10 points, got {n}")));
    }
    if !(3.0..=max_perplexity(n)).contains(&cfg.perplexity) {
        return Err(Error::precondition(format!(
            "perplexity {} infeasible for {n} points (allowed 3..={:.3})",
            cfg.perplexity,
            max_perplexity(n)
        )));
    }
    let dist = squared_distances(vectors, n, dim);
    let aff = input_affinities(&dist, n, cfg.perplexity);
    let perplexity_error = aff.perplexities.iter().map(|p| (p - cfg.perplexity).abs()).fold(0.0, f64::max);
    let p = aff.p;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_SIGMA).expect("valid sigma");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_after_exaggeration = f64::NAN;

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iterations { 0.5 } else { 0.8 };
        let num = student_kernel(&y);
        let z: f64 = num.iter().sum();
        let grad: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let w = (exaggeration * p[i * n + j] - num[i * n + j] / z) * num[i * n + j];
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (velocity[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                velocity[i][d] = momentum * velocity[i][d] - cfg.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += velocity[i][d];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |m, v| [m[0] + v[0], m[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        if iter + 1 == cfg.exaggeration_iterations {
            kl_after_exaggeration = kl_divergence(&p, &y);
        }
    }
    if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(Error::Diverged {
            epoch: cfg.iterations,
            loss: f64::NAN,
        });
    }
    let kl = kl_divergence(&p, &y);
    Ok(TsneOutput {
        coordinates: y,
        kl,
        kl_after_exaggeration,
        perplexity_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub domain: Domain,
    pub label: usize,
    pub prediction: usize,
    pub mispredicted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub classes: Vec<usize>,
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub kl: f64,
    pub points: Vec<ProjectedPoint>,
}

/// One input point of [`project_points`].
pub struct PointMeta {
    pub id: usize,
    pub domain: Domain,
    pub label: usize,
    pub prediction: usize,
}

/// t-SNE over labeled points; perplexity is lowered to the feasible maximum
/// for small selections.
pub fn project_points(classes: Vec<usize>, vectors: &[f32], dim: usize, meta: &[PointMeta], cfg: &TsneConfig) -> Result<ProjectionResult> {
    let n = meta.len();
    let cfg = TsneConfig {
        perplexity: cfg.perplexity.min(max_perplexity(n)),
        ..cfg.clone()
    };
    let out = tsne(vectors, n, dim, &cfg)?;
    Ok(ProjectionResult {
        classes,
        perplexity: cfg.perplexity,
        iterations: cfg.iterations,
        seed: cfg.seed,
        kl: out.kl,
        points: meta
            .iter()
            .zip(&out.coordinates)
            .map(|(m, c)| ProjectedPoint {
                id: m.id,
                x: c[0],
                y: c[1],
                domain: m.domain,
                label: m.label,
                prediction: m.prediction,
                mispredicted: m.label != m.prediction,
            })
            .collect(),
    })
}
