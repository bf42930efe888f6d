//! The trainable projection encoder and its alternating training loop.

mod checkpoint;
mod log;
mod train;

pub use checkpoint::{load_wshp, read_wshp, save_wshp, write_wshp, CheckpointError, WSHP_MAGIC, WSHP_VERSION};
pub use log::{EpochRecord, TrainingLog};
pub use train::{train_shaper, BatchGradient, ShaperRun, ShaperTrainer, Term, TermCritic};

use crate::dataset::{DatasetError, EmbeddingDataset};
use crate::mi::{MiError, DEFAULT_CRITIC_HIDDEN, DEFAULT_EMA_DECAY};
use crate::tensor::{Activation, DenseNet, KernelError};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShaperError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Mi(#[from] MiError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Encoder as it was at the start of the failing epoch.
        last_good: Box<ShaperEncoder>,
    },
}

pub type Result<T, E = ShaperError> = std::result::Result<T, E>;

/// Projection `R^D -> R^d` applied on top of frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ShaperEncoder {
    net: DenseNet,
}

impl ShaperEncoder {
    /// Single affine layer, Glorot-initialized.
    pub fn linear<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        Self::mlp(&[input_dim, output_dim], rng)
    }

    /// `dims = [D, h1, ..., d]`; tanh hidden layers, linear output.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(ShaperError::Config("encoder needs input and output dimensions".into()));
        }
        let net = DenseNet::mlp(dims, Activation::Tanh, Activation::Identity, rng)?;
        Self::from_net(net)
    }

    /// Wraps a network, enforcing compression (`d < D`).
    pub fn from_net(net: DenseNet) -> Result<Self> {
        if net.d_out() >= net.d_in() {
            return Err(ShaperError::Config(format!(
                "encoder must compress: output dim {} is not below input dim {}",
                net.d_out(),
                net.d_in()
            )));
        }
        Ok(Self { net })
    }

    /// Wraps a network without the compression check, for square test
    /// encoders.
    pub fn from_net_unchecked(net: DenseNet) -> Self {
        Self { net }
    }

    pub fn input_dim(&self) -> usize {
        self.net.d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.net.d_out()
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward(x)?)
    }

    pub fn encode_dataset(&self, dataset: &EmbeddingDataset) -> Result<Array2<f64>> {
        self.encode(dataset.x_f64().view())
    }
}

/// Critic steps per epoch: `max(n_min, floor(n0 · decay^epoch))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiSchedule {
    pub n0: usize,
    pub decay: f64,
    pub n_min: usize,
}

impl Default for MiSchedule {
    fn default() -> Self {
        Self {
            n0: 200,
            decay: 0.95,
            n_min: 60,
        }
    }
}

pub fn mi_iteration_schedule(epoch: usize, schedule: &MiSchedule) -> usize {
    let exp = i32::try_from(epoch).unwrap_or(i32::MAX);
    let raw = (schedule.n0 as f64 * schedule.decay.powi(exp)).floor() as usize;
    raw.max(schedule.n_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Encoded dimension `d`.
    pub output_dim: usize,
    /// Hidden widths of the encoder; empty means a single affine layer.
    pub encoder_hidden: Vec<usize>,
    /// Weight of the information-preservation term `I(E; X)`.
    pub gamma: f64,
    /// One weight per task label column.
    pub lambdas: Vec<f64>,
    /// One weight per sensitive label column.
    pub mus: Vec<f64>,
    pub encoder_lr: f64,
    /// Per-epoch multiplicative decay of the encoder learning rate.
    pub encoder_lr_decay: f64,
    pub critic_lr: f64,
    pub critic_hidden: Vec<usize>,
    pub ema_decay: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: MiSchedule,
    pub seed: u64,
    /// Per-epoch encoder checkpoints are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            output_dim: 64,
            encoder_hidden: Vec::new(),
            gamma: 0.0,
            lambdas: vec![1.0],
            mus: vec![1.0],
            encoder_lr: 2e-3,
            encoder_lr_decay: 0.93,
            critic_lr: 3e-3,
            critic_hidden: DEFAULT_CRITIC_HIDDEN.to_vec(),
            ema_decay: Some(DEFAULT_EMA_DECAY),
            batch_size: 1024,
            epochs: 50,
            schedule: MiSchedule::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dataset: &EmbeddingDataset) -> Result<()> {
        let bad = |m: String| Err(ShaperError::Config(m));
        if self.lambdas.len() != dataset.task_labels().len() {
            return bad(format!(
                "{} lambdas for {} task label columns",
                self.lambdas.len(),
                dataset.task_labels().len()
            ));
        }
        if self.mus.len() != dataset.sens_labels().len() {
            return bad(format!(
                "{} mus for {} sensitive label columns",
                self.mus.len(),
                dataset.sens_labels().len()
            ));
        }
        let weights = std::iter::once(self.gamma).chain(self.lambdas.iter().copied()).chain(self.mus.iter().copied());
        for w in weights.clone() {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("objective weights must be finite and non-negative, got {w}"));
            }
        }
        if weights.clone().all(|w| w == 0.0) {
            return bad("all objective weights are zero".into());
        }
        if self.output_dim == 0 || self.output_dim >= dataset.dim() {
            return bad(format!(
                "output_dim {} must lie in [1, {})",
                self.output_dim,
                dataset.dim()
            ));
        }
        if self.batch_size == 0 || self.batch_size > dataset.n() {
            return bad(format!(
                "batch_size {} must lie in [1, {}]",
                self.batch_size,
                dataset.n()
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        let s = &self.schedule;
        if s.n_min == 0 || !(s.decay > 0.0 && s.decay <= 1.0) {
            return bad(format!("schedule needs n_min >= 1 and decay in (0, 1], got {s:?}"));
        }
        for lr in [self.encoder_lr, self.critic_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rates must be positive, got {lr}"));
            }
        }
        if !(self.encoder_lr_decay > 0.0 && self.encoder_lr_decay <= 1.0) {
            return bad(format!("encoder_lr_decay {} must lie in (0, 1]", self.encoder_lr_decay));
        }
        if let Some(decay) = self.ema_decay {
            if !(0.0..1.0).contains(&decay) {
                return bad(format!("ema_decay {decay} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.encoder_hidden);
        dims.push(self.output_dim);
        dims
    }
}

/// `γ·mi_keep + Σ λ_i·mi_task_i − Σ μ_j·mi_sens_j`, to be maximized.
pub fn composite_objective(mi_keep: f64, mi_task: &[f64], mi_sens: &[f64], config: &TrainConfig) -> Result<f64> {
    if mi_task.len() != config.lambdas.len() || mi_sens.len() != config.mus.len() {
        return Err(ShaperError::Config(format!(
            "objective expects {} task and {} sensitive terms, got {} and {}",
            config.lambdas.len(),
            config.mus.len(),
            mi_task.len(),
            mi_sens.len()
        )));
    }
    let keep = if config.gamma == 0.0 { 0.0 } else { config.gamma * mi_keep };
    let task: f64 = config.lambdas.iter().zip(mi_task).map(|(w, v)| w * v).sum();
    let sens: f64 = config.mus.iter().zip(mi_sens).map(|(w, v)| w * v).sum();
    Ok(keep + task - sens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Layer;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(gamma: f64, lambdas: &[f64], mus: &[f64]) -> TrainConfig {
        TrainConfig {
            gamma,
            lambdas: lambdas.to_vec(),
            mus: mus.to_vec(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn objective_arithmetic() {
        let v = composite_objective(0.0, &[0.5], &[0.2], &cfg(0.0, &[1.0], &[1.0])).unwrap();
        assert!((v - 0.3).abs() < 1e-15);
        assert_eq!(composite_objective(0.0, &[0.0], &[0.0], &cfg(0.0, &[1.0], &[1.0])).unwrap(), 0.0);
        let v = composite_objective(0.4, &[0.1, 0.2], &[0.05], &cfg(0.5, &[1.0, 2.0], &[3.0])).unwrap();
        assert!((v - 0.55).abs() < 1e-12);
        assert!(composite_objective(0.0, &[0.1, 0.2], &[0.05], &cfg(0.0, &[1.0], &[1.0])).is_err());
    }

    #[test]
    fn schedule_values() {
        let flat = MiSchedule {
            n0: 200,
            decay: 1.0,
            n_min: 20,
        };
        assert!((0..60).all(|e| mi_iteration_schedule(e, &flat) == 200));
        let s = MiSchedule {
            n0: 200,
            decay: 0.9,
            n_min: 20,
        };
        assert_eq!(mi_iteration_schedule(0, &s), 200);
        assert_eq!((200.0 * 0.9f64.powi(30)).floor(), 8.0);
        assert_eq!(mi_iteration_schedule(30, &s), 20);
        let steps: Vec<usize> = (0..100).map(|e| mi_iteration_schedule(e, &s)).collect();
        assert!(steps.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn identity_and_zero_encoders() {
        let x = Array2::from_shape_fn((5, 3), |(i, j)| i as f64 - 0.5 * j as f64);
        let id = ShaperEncoder::from_net_unchecked(
            DenseNet::new(vec![Layer::new(Array2::eye(3), Array1::zeros(3), Activation::Identity)]).unwrap(),
        );
        assert_eq!(id.encode(x.view()).unwrap(), x);
        let zero = ShaperEncoder::from_net(
            DenseNet::new(vec![Layer::new(Array2::zeros((2, 3)), Array1::zeros(2), Activation::Identity)]).unwrap(),
        )
        .unwrap();
        assert!(zero.encode(x.view()).unwrap().iter().all(|&v| v == 0.0));
        assert!(zero.encode(Array2::zeros((1, 4)).view()).is_err());
    }

    #[test]
    fn square_encoder_rejected_by_default() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ShaperEncoder::linear(8, 8, &mut rng).is_err());
        let enc = ShaperEncoder::linear(512, 64, &mut rng).unwrap();
        assert_eq!(enc.param_count(), 512 * 64 + 64);
    }
}
