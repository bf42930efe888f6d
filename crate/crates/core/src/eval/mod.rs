//! Linear probes with AUROC, exact t-SNE and run reports.

mod report;
mod tsne;

pub use report::{emit_report, MiComparison, Report, ReportInputs, TsneRows};
pub use tsne::{tsne_2d, TsneConfig, TsneResult};

use crate::rng::{seeded, stream};
use crate::tensor::{Activation, AdamConfig, AdamState, DenseNet, KernelError};
use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUROC is undefined: {0}")]
    UndefinedMetric(String),
    #[error("invalid evaluation input: {0}")]
    Input(String),
    #[error("no split with both classes on each side after {attempts} attempts")]
    SingleClassSplit { attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Mann-Whitney AUROC with half credit for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Input("NaN score".into()));
    }
    if let Some(&b) = labels.iter().find(|&&b| b > 1) {
        return Err(EvalError::Input(format!("label {b} is not binary")));
    }
    let n_pos = labels.iter().filter(|&&b| b == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::UndefinedMetric("only one class present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg_rank * pos as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Original,
    Random,
    Noisy,
    Encoded,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Original => "original",
            EmbeddingKind::Random => "random",
            EmbeddingKind::Noisy => "noisy",
            EmbeddingKind::Encoded => "encoded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Task,
    Sensitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub label_name: String,
    pub role: LabelRole,
    pub embedding_kind: EmbeddingKind,
    pub auroc: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub test_fraction: f64,
    /// Width of an optional ReLU hidden layer; `None` is logistic regression.
    pub hidden: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-2,
            test_fraction: 0.2,
            hidden: None,
        }
    }
}

const SPLIT_ATTEMPTS: usize = 5;

/// Seeded train/test split with both classes on each side.
pub fn probe_split(labels: &[u8], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = labels.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(EvalError::Config(format!(
            "test fraction {test_fraction} leaves an empty split of {n} rows"
        )));
    }
    let mut rng = seeded(seed, stream::PROBE);
    let both = |rows: &[usize]| {
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        pos > 0 && pos < rows.len()
    };
    for _ in 0..SPLIT_ATTEMPTS {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let train = order.split_off(n_test);
        if both(&order) && both(&train) {
            return Ok((train, order));
        }
    }
    Err(EvalError::SingleClassSplit {
        attempts: SPLIT_ATTEMPTS,
    })
}

/// Fits a probe on a seeded 80/20 split of `(features, labels)` and
/// reports test-set AUROC. Features are standardized with train-split
/// statistics; training is full-batch Adam on the cross-entropy.
pub fn train_probe(
    features: ArrayView2<f64>,
    labels: &[u8],
    label_name: &str,
    role: LabelRole,
    kind: EmbeddingKind,
    config: &ProbeConfig,
    seed: u64,
) -> Result<ProbeResult> {
    if features.nrows() != labels.len() {
        return Err(EvalError::Input(format!(
            "{} rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if config.epochs == 0 || !(config.lr > 0.0) {
        return Err(EvalError::Config("probe needs positive epochs and learning rate".into()));
    }
    let (train, test) = probe_split(labels, config.test_fraction, seed)?;
    let mut xtr = features.select(Axis(0), &train);
    let mut xte = features.select(Axis(0), &test);
    let mean = xtr.mean_axis(Axis(0)).expect("non-empty train split");
    let std = xtr.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    for x in [&mut xtr, &mut xte] {
        *x -= &mean;
        *x /= &std;
    }
    let ytr: Array1<f64> = train.iter().map(|&i| f64::from(labels[i])).collect();

    let mut dims = vec![features.ncols()];
    dims.extend(config.hidden);
    dims.push(1);
    let mut rng = seeded(seed, stream::PROBE + 1);
    let mut net = DenseNet::mlp(&dims, Activation::Relu, Activation::Identity, &mut rng)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr));
    let n = train.len() as f64;
    for _ in 0..config.epochs {
        let cache = net.forward_cached(xtr.view())?;
        let logits = cache.output().column(0).to_owned();
        let upstream = (logits.mapv(sigmoid) - &ytr) / n;
        let grads = net.backward(&cache, upstream.insert_axis(Axis(1)).view())?;
        adam.step(&mut net, &grads)?;
    }
    let scores = net.forward(xte.view())?.column(0).to_vec();
    let test_labels: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    Ok(ProbeResult {
        label_name: label_name.to_owned(),
        role,
        embedding_kind: kind,
        auroc: auroc(&scores, &test_labels)?,
        n_train: train.len(),
        n_test: test.len(),
        seed,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Relative drop `(before - after) / before` in percent.
pub fn relative_drop_pct(before: f64, after: f64) -> f64 {
    100.0 * (before - after) / before
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auroc(&[2.0; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(auroc(&[1.0, 2.0], &[1, 1]), Err(EvalError::UndefinedMetric(_))));
    }

    #[test]
    fn separable_feature_probe() {
        let x = Array2::from_shape_fn((400, 1), |(i, _)| i as f64);
        let y: Vec<u8> = (0..400).map(|i| u8::from(i >= 200)).collect();
        let r = train_probe(
            x.view(),
            &y,
            "t",
            LabelRole::Task,
            EmbeddingKind::Original,
            &ProbeConfig::default(),
            1,
        )
        .unwrap();
        assert!(r.auroc >= 0.99);
        assert_eq!((r.n_train, r.n_test), (320, 80));
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let mut rng = seeded(4, 0);
        // 2000 test rows put the AUROC standard error near 0.013.
        let x = Array2::from_shape_fn((10_000, 8), |_| rng.random::<f64>());
        let y: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let r = train_probe(
            x.view(),
            &y,
            "s",
            LabelRole::Sensitive,
            EmbeddingKind::Random,
            &ProbeConfig::default(),
            2,
        )
        .unwrap();
        assert!((0.45..=0.55).contains(&r.auroc), "{}", r.auroc);
    }

    #[test]
    fn split_needs_both_classes() {
        let y = vec![0u8; 10];
        assert!(matches!(
            probe_split(&y, 0.2, 0),
            Err(EvalError::SingleClassSplit { attempts: 5 })
        ));
        let mut y = vec![0u8; 100];
        y[..50].fill(1);
        let (train, test) = probe_split(&y, 0.2, 0).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert!(test.iter().all(|i| !train.contains(i)));
    }
}
