//! Exact t-SNE: per-point bandwidth search, symmetrized affinities and
//! momentum gradient descent on KL(P || Q) under a Student-t kernel.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::named_rng;

pub const MIN_POINTS: usize = 5;
const ENTROPY_TOL: f64 = 1e-8;
const MATRIX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) || self.iterations < 250 || self.exaggeration_iters > self.iterations {
            return Err(Error::Config(format!(
                "t-SNE needs perplexity >= 2 and 250 <= exaggeration/iterations, got {self:?}"
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config("t-SNE learning rate must be positive and exaggeration >= 1".into()));
        }
        Ok(())
    }

    /// Perplexity actually used for `n` points: kept below `n / 3`.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        self.perplexity.min((n as f64 - 1.0) / 3.0)
    }
}

/// Dense row-major `n x n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Symmetric, non-negative, zero diagonal and unit total mass.
    pub fn check_distribution(&self, what: &str) -> Result<()> {
        let min = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let diag = (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max);
        let sum = self.sum();
        if !(min >= 0.0) || self.max_asymmetry() > MATRIX_TOL || (sum - 1.0).abs() > MATRIX_TOL || diag > 0.0 {
            return Err(Error::Data(format!(
                "{what} is not a joint distribution (min {min}, sum {sum}, asymmetry {}, diagonal {diag})",
                self.max_asymmetry()
            )));
        }
        Ok(())
    }
}

pub fn squared_distances(points: &[Vec<f64>]) -> SquareMatrix {
    let n = points.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    SquareMatrix { n, data }
}

/// Conditional distribution of row `i` at precision `beta` and its entropy in bits.
fn conditional_row(d: &SquareMatrix, i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let n = d.n;
    // Shift by the nearest neighbour so the largest weight is 1.
    let dmin = (0..n).filter(|&j| j != i).map(|j| d.get(i, j)).fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for j in 0..n {
        row[j] = if j == i { 0.0 } else { (-(d.get(i, j) - dmin) * beta).exp() };
        z += row[j];
    }
    let mut h = 0.0;
    for j in 0..n {
        row[j] /= z;
        if row[j] > 0.0 {
            h -= row[j] * row[j].ln();
        }
    }
    h / std::f64::consts::LN_2
}

/// Conditional affinities `p_{j|i}` with each row's entropy at
/// `log2(perplexity)`; returns the rows and the achieved entropies.
pub fn conditional_affinities(d: &SquareMatrix, perplexity: f64) -> Result<(SquareMatrix, Vec<f64>)> {
    let n = d.n;
    let target = perplexity.log2();
    if target >= ((n - 1) as f64).log2() {
        return Err(Error::Data(format!("perplexity {perplexity} needs more than {n} points")));
    }
    let mut data = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let row = &mut data[i * n..(i + 1) * n];
        // Entropy falls monotonically in beta; bisect on log(beta).
        let (mut lo, mut hi) = (-60.0f64, 60.0f64);
        let mut spread = 0.0;
        for j in 0..n {
            if j != i {
                spread += d.get(i, j);
            }
        }
        let scale = ((n - 1) as f64 / spread.max(f64::MIN_POSITIVE)).ln();
        lo += scale;
        hi += scale;
        let mut h = 0.0;
        for _ in 0..500 {
            let mid = 0.5 * (lo + hi);
            h = conditional_row(d, i, mid.exp(), row);
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (h - target).abs() >= 1e-5 {
            return Err(Error::Data(format!("bandwidth search for point {i} stalled at entropy {h}, target {target}")));
        }
        entropies.push(h);
    }
    Ok((SquareMatrix { n, data }, entropies))
}

/// `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(conditional: &SquareMatrix) -> SquareMatrix {
    let n = conditional.n;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = (conditional.get(i, j) + conditional.get(j, i)) / (2.0 * n as f64);
        }
    }
    SquareMatrix { n, data }
}

/// Student-t joint similarities of an embedding, plus the unnormalized kernel.
pub fn student_t(points: &[[f64; 2]]) -> (SquareMatrix, Vec<f64>) {
    let n = points.len();
    let mut kernel = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            kernel[i * n + j] = k;
            kernel[j * n + i] = k;
            z += 2.0 * k;
        }
    }
    let data = kernel.iter().map(|k| k / z).collect();
    (SquareMatrix { n, data }, kernel)
}

pub fn kl_divergence(p: &SquareMatrix, q: &SquareMatrix) -> f64 {
    p.data
        .iter()
        .zip(&q.data)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv / qv.max(f64::MIN_POSITIVE)).ln())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    pub perplexity: f64,
    /// Achieved per-point entropies in bits.
    pub entropies: Vec<f64>,
    /// KL(P || Q) of the random initial layout, once exaggeration ends, and
    /// after the last iteration.
    pub initial_kl: f64,
    pub kl_after_exaggeration: f64,
    pub final_kl: f64,
    /// `(iteration, KL)` samples.
    pub kl_trace: Vec<(usize, f64)>,
}

pub fn tsne_embed(vectors: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    cfg.validate()?;
    let n = vectors.len();
    if n < MIN_POINTS {
        return Err(Error::Data(format!("t-SNE needs at least {MIN_POINTS} points, got {n}")));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Data("feature vectors must share one non-zero length".into()));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature value".into()));
    }
    let perplexity = cfg.effective_perplexity(n);
    let d = squared_distances(vectors);
    let (cond, entropies) = conditional_affinities(&d, perplexity)?;
    let p = joint_affinities(&cond);
    p.check_distribution("P")?;

    let mut rng = named_rng(cfg.seed, "tsne-init");
    let normal = Normal::new(0.0, 1e-4).unwrap();
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0; 2]; n];
    let initial_kl = kl_divergence(&p, &student_t(&y).0);
    let mut kl_trace = Vec::new();
    let mut kl_after_exaggeration = f64::NAN;
    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        let (q, kernel) = student_t(&y);
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = (exaggeration * p.get(i, j) - q.get(i, j)) * kernel[i * n + j];
                grad[0] += 4.0 * m * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if (grad[k] > 0.0) != (velocity[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    f64::max(gains[i][k] * 0.8, 0.01)
                };
                velocity[i][k] = momentum * velocity[i][k] - cfg.learning_rate * gains[i][k] * grad[k];
            }
        }
        for i in 0..n {
            y[i][0] += velocity[i][0];
            y[i][1] += velocity[i][1];
        }
        let mean = [
            y.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            y.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        y.iter_mut().for_each(|p| {
            p[0] -= mean[0];
            p[1] -= mean[1];
        });
        let done = iter + 1;
        if done == cfg.exaggeration_iters || done % 50 == 0 || done == cfg.iterations {
            let (q, _) = student_t(&y);
            let kl = kl_divergence(&p, &q);
            if done == cfg.exaggeration_iters {
                kl_after_exaggeration = kl;
            }
            kl_trace.push((done, kl));
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-SNE embedding diverged".into()));
    }
    let (q, _) = student_t(&y);
    q.check_distribution("Q")?;
    let final_kl = kl_divergence(&p, &q);
    Ok(TsneResult {
        points: y,
        perplexity,
        entropies,
        initial_kl,
        kl_after_exaggeration,
        final_kl,
        kl_trace,
    })
}
