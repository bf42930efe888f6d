//! Comparison embeddings: an untrained random projection and
//! Gaussian-mechanism noise on clipped rows.

use crate::rng::{seeded, stream};
use crate::shaper::{ShaperEncoder, ShaperError};
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline configuration: {0}")]
    Config(String),
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error(transparent)]
    Encoder(#[from] ShaperError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// A Glorot-initialized affine `input_dim → output_dim` encoder that is
/// never trained.
pub fn random_encoder(input_dim: usize, output_dim: usize, seed: u64) -> Result<ShaperEncoder> {
    if output_dim >= input_dim {
        return Err(BaselineError::Config(format!(
            "output dimension {output_dim} must be below input dimension {input_dim}"
        )));
    }
    let mut rng = seeded(seed, stream::ENCODER_INIT);
    Ok(ShaperEncoder::linear(input_dim, output_dim, &mut rng)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpNoiseConfig {
    pub clip_norm: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for DpNoiseConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            epsilon: 1.0,
            delta: 1e-5,
            seed: 0,
        }
    }
}

impl DpNoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BaselineError::Config(m));
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm = {} must be positive", self.clip_norm));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon = {} must be positive", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        Ok(())
    }

    /// Noise scale of the analytic Gaussian mechanism with sensitivity `C`.
    pub fn sigma(&self) -> f64 {
        self.clip_norm * (2.0 * (1.25 / self.delta).ln()).sqrt() / self.epsilon
    }
}

/// Scales each row to norm at most `C`, then adds `N(0, σ²)` to every entry.
pub fn dp_noise(x: ArrayView2<f64>, config: &DpNoiseConfig) -> Result<Array2<f64>> {
    config.validate()?;
    if let Some(row) = x.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(BaselineError::NonFinite { row });
    }
    let sigma = config.sigma();
    let mut rng = seeded(config.seed, stream::DP_NOISE);
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > config.clip_norm {
            row *= config.clip_norm / norm;
        }
        for v in row.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(out)
}
