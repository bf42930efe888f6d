use super::{EvalError, Result};
use crate::rng::{seeded, stream};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and momentum 0.5.
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

#[derive(Debug, Clone)]
pub struct TsneResult {
    pub coords: Array2<f64>,
    /// Entropy (nats) of each row's conditional affinity distribution.
    pub row_entropy: Vec<f64>,
    /// `(iteration, KL(P || Q))` every 50 iterations, without exaggeration.
    pub kl: Vec<(usize, f64)>,
}

const ENTROPY_TOL: f64 = 1e-5;
const SEARCH_STEPS: usize = 200;
const KL_EVERY: usize = 50;
const MIN_GAIN: f64 = 0.01;

/// Conditional affinities of one row for precision `beta`, plus their entropy.
fn row_affinity(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shift by the nearest neighbour distance for numerical range.
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *p = if j == i { 0.0 } else { (-(d - dmin) * beta).exp() };
        sum += *p;
    }
    let mut weighted = 0.0;
    for (&d, p) in dist.iter().zip(out.iter_mut()) {
        *p /= sum;
        weighted += *p * (d - dmin);
    }
    sum.ln() + beta * weighted
}

/// Bisection on the precision so each row's entropy matches `ln(perplexity)`.
fn conditional_affinities(dist: &Array2<f64>, perplexity: f64) -> Result<(Array2<f64>, Vec<f64>)> {
    let n = dist.nrows();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = dist.row(i);
            let d = d.as_slice().expect("standard layout");
            let mut p = vec![0.0; n];
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            for _ in 0..SEARCH_STEPS {
                let h = row_affinity(d, i, beta, &mut p);
                if (h - target).abs() <= ENTROPY_TOL {
                    return Ok((p, h));
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            Err(EvalError::Config(format!(
                "perplexity {perplexity} unreachable for row {i}"
            )))
        })
        .collect::<Result<_>>()?;
    let mut p = Array2::zeros((n, n));
    let mut entropy = Vec::with_capacity(n);
    for (i, (row, h)) in rows.into_iter().enumerate() {
        p.row_mut(i).assign(&ndarray::Array1::from(row));
        entropy.push(h);
    }
    Ok((p, entropy))
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let sq: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = x.dot(&x.t());
    for ((i, j), v) in d.indexed_iter_mut() {
        *v = (sq[i] + sq[j] - 2.0 * *v).max(0.0);
    }
    d.diag_mut().fill(0.0);
    d
}

/// Student-t kernel numerators with a zero diagonal, and their sum.
fn student_t(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut num = squared_distances(y.view()).mapv(|d| 1.0 / (1.0 + d));
    num.diag_mut().fill(0.0);
    let sum = num.sum();
    (num, sum)
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, sum: f64) -> f64 {
    p.iter()
        .zip(num.iter())
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &q)| pij * (pij / (q / sum).max(1e-300)).ln())
        .sum()
}

/// Exact t-SNE into two dimensions.
pub fn tsne_2d(x: ArrayView2<f64>, config: &TsneConfig) -> Result<TsneResult> {
    let n = x.nrows();
    if !(config.perplexity > 1.0) || 3.0 * config.perplexity >= n as f64 {
        return Err(EvalError::Config(format!(
            "perplexity {} needs 1 < perplexity and 3·perplexity < N = {n}",
            config.perplexity
        )));
    }
    if n > 10_000 {
        return Err(EvalError::Config(format!("exact t-SNE supports N ≤ 10000, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Input("non-finite embedding".into()));
    }
    let (cond, row_entropy) = conditional_affinities(&squared_distances(x), config.perplexity)?;
    let mut p = &cond + &cond.t();
    p /= 2.0 * n as f64;
    p.mapv_inplace(|v| v.max(1e-12));
    p.diag_mut().fill(0.0);

    let mut rng = seeded(config.seed, stream::TSNE);
    let mut y = Array2::from_shape_simple_fn((n, 2), || 1e-4 * rng.sample::<f64, _>(StandardNormal));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl = Vec::new();

    for it in 0..config.iterations {
        let early = it < config.exaggeration_iters;
        let exaggeration = if early { config.early_exaggeration } else { 1.0 };
        let momentum = if early { 0.5 } else { 0.8 };
        let (num, sum) = student_t(&y);

        // dC/dy_i = 4 Σ_j (p_ij - q_ij) num_ij (y_i - y_j)
        let rows: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut g0, mut g1) = (0.0, 0.0);
                for j in 0..n {
                    let w = (exaggeration * p[[i, j]] - num[[i, j]] / sum) * num[[i, j]];
                    g0 += w * (y[[i, 0]] - y[[j, 0]]);
                    g1 += w * (y[[i, 1]] - y[[j, 1]]);
                }
                [4.0 * g0, 4.0 * g1]
            })
            .collect();
        let grad = Array2::from_shape_vec((n, 2), rows.concat()).expect("n rows of 2");

        for ((g, v), gain) in grad.iter().zip(velocity.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(MIN_GAIN)
            };
            *v = momentum * *v - config.learning_rate * *gain * g;
        }
        y += &velocity;
        let mean = y.mean_axis(Axis(0)).expect("n > 0");
        y -= &mean;

        if (it + 1) % KL_EVERY == 0 {
            let (num, sum) = student_t(&y);
            kl.push((it + 1, kl_divergence(&p, &num, sum)));
        }
    }
    Ok(TsneResult {
        coords: y,
        row_entropy,
        kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clusters(n: usize, seed: u64) -> (Array2<f64>, Vec<u8>) {
        let mut rng = seeded(seed, 0);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
        let x = Array2::from_shape_fn((n, 10), |(i, j)| {
            let shift = if j == 0 && labels[i] == 1 { 10.0 } else { 0.0 };
            shift + rng.sample::<f64, _>(StandardNormal)
        });
        (x, labels)
    }

    #[test]
    fn perplexity_search_hits_target() {
        let (x, _) = clusters(120, 1);
        let (_, h) = conditional_affinities(&squared_distances(x.view()), 20.0).unwrap();
        assert!(h.iter().all(|e| (e - 20f64.ln()).abs() <= 1e-4));
    }

    #[test]
    fn infeasible_perplexity() {
        let (x, _) = clusters(30, 1);
        let cfg = TsneConfig {
            perplexity: 10.0,
            ..Default::default()
        };
        assert!(matches!(tsne_2d(x.view(), &cfg), Err(EvalError::Config(_))));
    }

    #[test]
    fn deterministic_and_kl_recorded() {
        let (x, _) = clusters(60, 2);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 300,
            ..Default::default()
        };
        let a = tsne_2d(x.view(), &cfg).unwrap();
        let b = tsne_2d(x.view(), &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
        assert_eq!(a.kl.iter().map(|k| k.0).collect::<Vec<_>>(), vec![50, 100, 150, 200, 250, 300]);
    }
}
