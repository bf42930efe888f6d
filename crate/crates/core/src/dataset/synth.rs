//! Synthetic data with known mutual information.

use super::{DatasetError, EmbeddingDataset, LabelColumn, Result};
use crate::rng::{seeded, stream};
use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianPair,
    Planted,
}

/// Generator settings for both synthetic families.
///
/// `planted` draws `z ~ N(0, I_k)` in a `k = latent_dim`-dimensional
/// subspace of `R^dim` spanned by an orthonormal basis whose first two
/// columns are `task_dir` and `sens_dir`; `x = Q z` is therefore an
/// isotropic Gaussian on that subspace, to which `noise_std · N(0, I_dim)`
/// is added. `latent_dim == dim` with zero noise is isotropic on all of
/// `R^dim`. Labels are the signs of `⟨x, task_dir⟩` and `⟨x, sens_dir⟩`,
/// each flipped independently with probability `label_noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticRecipe {
    pub kind: SyntheticKind,
    pub n: usize,
    /// Ambient dimension `D` of planted embeddings.
    pub dim: usize,
    /// Per-variable dimension of gaussian pairs.
    pub d: usize,
    pub rho: f64,
    pub latent_dim: usize,
    /// Standard deviation of the isotropic ambient noise.
    pub noise_std: f64,
    pub label_noise: f64,
    pub task_dir: Option<Vec<f64>>,
    pub sens_dir: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticRecipe {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Planted,
            n: 10_000,
            dim: 512,
            d: 1,
            rho: 0.5,
            latent_dim: 4,
            noise_std: 0.1,
            label_noise: 0.1,
            task_dir: None,
            sens_dir: None,
            seed: 7,
        }
    }
}

impl SyntheticRecipe {
    pub fn gaussian_pair(rho: f64, d: usize, n: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::GaussianPair,
            n,
            d,
            rho,
            seed,
            ..Self::default()
        }
    }

    pub fn planted(n: usize, dim: usize, latent_dim: usize, label_noise: f64, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::Planted,
            n,
            dim,
            latent_dim,
            label_noise,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(DatasetError::Config(m));
        if self.n < 2 {
            return cfg(format!("n = {} must be at least 2", self.n));
        }
        match self.kind {
            SyntheticKind::GaussianPair => {
                if !(self.rho.abs() < 1.0) {
                    return cfg(format!("|rho| = {} must be < 1", self.rho.abs()));
                }
                if self.d == 0 {
                    return cfg("d must be positive".into());
                }
            }
            SyntheticKind::Planted => {
                if self.dim < 2 {
                    return cfg(format!("dim = {} must be at least 2", self.dim));
                }
                if self.latent_dim < 2 || self.latent_dim > self.dim {
                    return cfg(format!(
                        "latent_dim = {} must lie in [2, dim = {}]",
                        self.latent_dim, self.dim
                    ));
                }
                if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
                    return cfg(format!("noise_std = {} must be finite and non-negative", self.noise_std));
                }
                if !(0.0..=0.5).contains(&self.label_noise) {
                    return cfg(format!("label_noise = {} must lie in [0, 0.5]", self.label_noise));
                }
                for (name, dir) in [("task_dir", &self.task_dir), ("sens_dir", &self.sens_dir)] {
                    if let Some(v) = dir {
                        if v.len() != self.dim {
                            return cfg(format!("{name} has length {}, expected {}", v.len(), self.dim));
                        }
                        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if (norm - 1.0).abs() > 1e-6 {
                            return cfg(format!("{name} has norm {norm}, expected 1"));
                        }
                    }
                }
                if let (Some(t), Some(s)) = (&self.task_dir, &self.sens_dir) {
                    let dot: f64 = t.iter().zip(s).map(|(a, b)| a * b).sum();
                    if dot.abs() > 1e-6 {
                        return cfg(format!("task_dir and sens_dir are not orthogonal (dot = {dot:e})"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `-(d/2) ln(1 - rho^2)` nats.
pub fn gaussian_mi(rho: f64, d: usize) -> f64 {
    -0.5 * d as f64 * (1.0 - rho * rho).ln()
}

/// MI between a uniform bit and its copy through a binary symmetric
/// channel with flip probability `p`: `ln 2 - H_b(p)` nats.
pub fn binary_channel_mi(p: f64) -> f64 {
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    std::f64::consts::LN_2 - h(p) - h(1.0 - p)
}

#[derive(Debug, Clone)]
pub struct GaussianPair {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
    pub rho: f64,
    pub true_mi: f64,
}

/// `y = rho z + sqrt(1 - rho^2) ε` per coordinate, `z, ε ~ N(0, I_d)`.
pub fn synth_gaussian_pair(recipe: &SyntheticRecipe) -> Result<GaussianPair> {
    if recipe.kind != SyntheticKind::GaussianPair {
        return Err(DatasetError::Config("recipe kind is not gaussian_pair".into()));
    }
    recipe.validate()?;
    let mut rng = seeded(recipe.seed, stream::SYNTH);
    let (n, d, rho) = (recipe.n, recipe.d, recipe.rho);
    let noise_scale = (1.0 - rho * rho).sqrt();
    let mut z = Array2::zeros((n, d));
    let mut y = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let a: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            z[[i, j]] = a;
            y[[i, j]] = rho * a + noise_scale * e;
        }
    }
    Ok(GaussianPair {
        z,
        y,
        rho,
        true_mi: gaussian_mi(rho, d),
    })
}

fn gram_schmidt_push(basis: &mut Vec<Array1<f64>>, mut v: Array1<f64>) -> bool {
    for b in basis.iter() {
        let proj = v.dot(b);
        v.scaled_add(-proj, b);
    }
    let norm = v.dot(&v).sqrt();
    if norm < 1e-8 {
        return false;
    }
    basis.push(v / norm);
    true
}

pub fn synth_planted(recipe: &SyntheticRecipe) -> Result<EmbeddingDataset> {
    if recipe.kind != SyntheticKind::Planted {
        return Err(DatasetError::Config("recipe kind is not planted".into()));
    }
    recipe.validate()?;
    let mut rng = seeded(recipe.seed, stream::SYNTH);
    let (n, dim, k) = (recipe.n, recipe.dim, recipe.latent_dim);

    let random_vec = |rng: &mut crate::rng::Rng| Array1::from_shape_simple_fn(dim, || rng.sample(StandardNormal));
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
    for given in [&recipe.task_dir, &recipe.sens_dir] {
        match given {
            // Already unit and mutually orthogonal (validated); re-projecting
            // only removes rounding residue.
            Some(v) => {
                gram_schmidt_push(&mut basis, Array1::from(v.clone()));
            }
            None => while !gram_schmidt_push(&mut basis, random_vec(&mut rng)) {},
        }
    }
    while basis.len() < k {
        let v = random_vec(&mut rng);
        gram_schmidt_push(&mut basis, v);
    }

    let mut x = Array2::<f32>::zeros((n, dim));
    let mut task = Vec::with_capacity(n);
    let mut sens = Vec::with_capacity(n);
    let mut flips = seeded(recipe.seed, stream::SYNTH_LABELS);
    let mut row = Array1::<f64>::zeros(dim);
    for i in 0..n {
        row.fill(0.0);
        for b in &basis {
            let zj: f64 = rng.sample(StandardNormal);
            row.scaled_add(zj, b);
        }
        if recipe.noise_std > 0.0 {
            for v in row.iter_mut() {
                *v += recipe.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let latent = [row.dot(&basis[0]), row.dot(&basis[1])];
        for (dst, &v) in x.row_mut(i).iter_mut().zip(row.iter()) {
            *dst = v as f32;
        }
        let mut label = |score: f64| {
            let clean = u8::from(score > 0.0);
            if flips.random::<f64>() < recipe.label_noise {
                1 - clean
            } else {
                clean
            }
        };
        task.push(label(latent[0]));
        sens.push(label(latent[1]));
    }
    let provenance = format!(
        "synthetic:{}",
        serde_json::to_string(recipe).expect("recipe serializes")
    );
    EmbeddingDataset::new(
        x,
        vec![LabelColumn::new("task", task)],
        vec![LabelColumn::new("sensitive", sens)],
        provenance,
    )
}
