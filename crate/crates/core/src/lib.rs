//! Mutual-information guided projection of frozen embeddings.
//!
//! A linear (or small MLP) encoder maps `D`-dimensional embeddings to
//! `d < D` dimensions. Donsker-Varadhan critics estimate the mutual
//! information between the encoded embeddings and each task label,
//! each sensitive label, and optionally the raw embeddings; the encoder
//! is trained to maximize
//!
//! ```text
//! γ·I(E; X) + Σ λ_i·I(E; T_i) − Σ μ_j·I(E; S_j)
//! ```
//!
//! by alternating critic ascent with encoder updates through the frozen
//! critics.
//!
//! Modules:
//! - [`tensor`]: dense networks, reverse-mode gradients, Adam.
//! - [`dataset`]: embedding datasets, the EMBD file format, batching,
//!   synthetic generators.
//! - [`mi`]: the DV estimator and critic training.
//! - [`shaper`]: the encoder and the alternating training loop.
//! - [`baselines`]: random projections and Gaussian-mechanism noise.
//! - [`eval`]: probes, AUROC, t-SNE, report files.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod mi;
pub mod rng;
pub mod shaper;
pub mod tensor;
