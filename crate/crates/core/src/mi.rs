//! Donsker-Varadhan mutual-information estimation with a trainable critic.
//!
//! For a batch of joint pairs `(e_k, y_k)` and marginal pairs
//! `(e_k, y_π(k))` the estimate is
//!
//! ```text
//! mean_k F(e_k, y_k) - log mean_k exp(F(e_k, y_π(k)))
//! ```
//!
//! which lower-bounds `I(E; Y)` for every critic `F` and is tight at the
//! log density ratio. Critic outputs are clamped to `[-20, 20]` before
//! exponentiation.

use crate::dataset::{IndexBatch, PairBatch, PairSampler, Partner};
use crate::rng::{seeded, stream};
use crate::tensor::{logmeanexp, Activation, AdamConfig, AdamState, DenseNet, Gradients, KernelError};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

pub const CRITIC_CLAMP: f64 = 20.0;
pub const DIVERGENCE_LIMIT: f64 = 50.0;
pub const DEFAULT_CRITIC_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_EMA_DECAY: f64 = 0.99;

#[derive(Debug, Error)]
pub enum MiError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("critic expects {expected} input columns, batch provides {got}")]
    InputWidth { expected: usize, got: usize },
    #[error("critic network must map {expected} inputs to one output, got {d_in} -> {d_out}")]
    CriticShape {
        expected: usize,
        d_in: usize,
        d_out: usize,
    },
    #[error("non-finite value on the {path} path")]
    NonFinite { path: &'static str },
    #[error("estimate diverged at step {step}: {value} nats (last finite estimate {last_good:?})")]
    Diverged {
        step: usize,
        value: f64,
        last_good: Option<f64>,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = MiError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerKind {
    BinaryLabel,
    RawEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub embed_dim: usize,
    pub partner_kind: PartnerKind,
    pub partner_dim: usize,
}

impl CriticSpec {
    pub fn for_labels(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            partner_kind: PartnerKind::BinaryLabel,
            partner_dim: 2,
        }
    }

    pub fn for_raw(embed_dim: usize, partner_dim: usize) -> Self {
        Self {
            embed_dim,
            partner_kind: PartnerKind::RawEmbedding,
            partner_dim,
        }
    }

    pub fn for_partner(embed_dim: usize, partner: &Partner<'_>) -> Self {
        match partner {
            Partner::Labels(_) => Self::for_labels(embed_dim),
            Partner::Raw(x) => Self::for_raw(embed_dim, x.ncols()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.partner_dim
    }
}

/// Scalar-valued network `F` over concatenated `[embedding | partner]` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    net: DenseNet,
    spec: CriticSpec,
}

impl Critic {
    /// ReLU MLP with the given hidden widths and a linear scalar head.
    pub fn new<R: Rng + ?Sized>(spec: CriticSpec, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(spec.input_dim());
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = DenseNet::mlp(&dims, Activation::Relu, Activation::Identity, rng)?;
        Self::from_net(spec, net)
    }

    pub fn from_net(spec: CriticSpec, net: DenseNet) -> Result<Self> {
        if net.d_in() != spec.input_dim() || net.d_out() != 1 {
            return Err(MiError::CriticShape {
                expected: spec.input_dim(),
                d_in: net.d_in(),
                d_out: net.d_out(),
            });
        }
        Ok(Self { net, spec })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn check(&self, batch: &PairBatch) -> Result<()> {
        let got = batch.embed.ncols() + batch.partner.ncols();
        if batch.embed.ncols() != self.spec.embed_dim || got != self.spec.input_dim() {
            return Err(MiError::InputWidth {
                expected: self.spec.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn scores(&self, input: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward(input)?.column(0).to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvEstimate {
    /// `joint_mean - marginal_logmeanexp`, in nats.
    pub value: f64,
    pub joint_mean: f64,
    pub marginal_logmeanexp: f64,
    pub batch_size: usize,
    /// Denominator used for the marginal-term gradient: the moving average
    /// when EMA correction is on, otherwise the batch `mean(exp F)`.
    pub ema_denominator: f64,
}

fn clamp(v: f64) -> f64 {
    v.clamp(-CRITIC_CLAMP, CRITIC_CLAMP)
}

fn summarize(joint: &Array1<f64>, marginal: &Array1<f64>) -> Result<(DvEstimate, Array1<f64>)> {
    if joint.iter().any(|v| !v.is_finite()) {
        return Err(MiError::NonFinite { path: "joint" });
    }
    if marginal.iter().any(|v| !v.is_finite()) {
        return Err(MiError::NonFinite { path: "marginal" });
    }
    let b = joint.len();
    let joint_mean = joint.mean().expect("non-empty batch");
    let clamped: Vec<f64> = marginal.iter().copied().map(clamp).collect();
    let mlme = logmeanexp(&clamped)?;
    let exp = Array1::from_iter(clamped.iter().map(|v| v.exp()));
    let mean_exp = exp.mean().expect("non-empty batch");
    Ok((
        DvEstimate {
            value: joint_mean - mlme,
            joint_mean,
            marginal_logmeanexp: mlme,
            batch_size: b,
            ema_denominator: mean_exp,
        },
        exp,
    ))
}

pub fn dv_estimate(critic: &Critic, batch: &PairBatch) -> Result<DvEstimate> {
    critic.check(batch)?;
    let joint = critic.scores(batch.joint_input().view())?;
    let marginal = critic.scores(batch.marginal_input().view())?;
    Ok(summarize(&joint, &marginal)?.0)
}

/// Moving average of the marginal `mean(exp F)` used in place of the
/// batch value in the critic gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmaDenominator {
    pub decay: f64,
    pub value: Option<f64>,
}

impl EmaDenominator {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    /// Folds in one batch mean and returns the updated average. The first
    /// call initializes the average to the batch mean.
    pub fn update(&mut self, batch_mean: f64) -> f64 {
        let next = match self.value {
            None => batch_mean,
            Some(prev) => self.decay * prev + (1.0 - self.decay) * batch_mean,
        };
        self.value = Some(next);
        next
    }
}

/// Gradient of the DV objective (ascent direction) with respect to the
/// critic parameters, together with the batch estimate.
pub fn critic_grad(
    critic: &Critic,
    batch: &PairBatch,
    ema: Option<&mut EmaDenominator>,
) -> Result<(Gradients, DvEstimate)> {
    critic.check(batch)?;
    let net = critic.net();
    let joint_cache = net.forward_cached(batch.joint_input().view())?;
    let marg_cache = net.forward_cached(batch.marginal_input().view())?;
    let joint = joint_cache.output().column(0).to_owned();
    let marginal = marg_cache.output().column(0).to_owned();
    let (mut est, exp) = summarize(&joint, &marginal)?;

    let b = batch.len() as f64;
    let denom = match ema {
        Some(ema) => ema.update(est.ema_denominator),
        None => est.ema_denominator,
    };
    est.ema_denominator = denom;

    let up_joint = Array2::from_elem((batch.len(), 1), 1.0 / b);
    let mut up_marg = Array2::zeros((batch.len(), 1));
    for (k, (&f, &e)) in marginal.iter().zip(exp.iter()).enumerate() {
        if f.abs() < CRITIC_CLAMP {
            up_marg[[k, 0]] = -e / (b * denom);
        }
    }
    let mut grads = net.backward(&joint_cache, up_joint.view())?;
    let marg_grads = net.backward(&marg_cache, up_marg.view())?;
    if marg_grads.flatten().iter().any(|v| !v.is_finite()) {
        return Err(MiError::NonFinite { path: "marginal" });
    }
    if grads.flatten().iter().any(|v| !v.is_finite()) {
        return Err(MiError::NonFinite { path: "joint" });
    }
    // The two input gradients have the same shape; summing them keeps
    // `grads.input` meaningful as d(objective)/d(critic input) per row pair.
    grads.add_scaled(&marg_grads, 1.0);
    Ok((grads, est))
}

/// DV estimate and its gradient with respect to `batch.embed`, with the
/// critic held fixed. The marginal term uses the exact batch
/// log-mean-exp.
pub fn dv_embed_grad(critic: &Critic, batch: &PairBatch) -> Result<(DvEstimate, Array2<f64>)> {
    let (grads, est) = critic_grad(critic, batch, None)?;
    // Joint row k and marginal row k share the embedding e_k, so the summed
    // input gradient restricted to the embedding columns is d(value)/d(e_k).
    let d = critic.spec().embed_dim;
    Ok((est, grads.input.slice(s![.., ..d]).to_owned()))
}

/// A critic with its optimizer state, trained by gradient ascent.
#[derive(Debug, Clone)]
pub struct CriticTrainer {
    pub critic: Critic,
    pub adam: AdamState,
    pub ema: Option<EmaDenominator>,
}

impl CriticTrainer {
    pub fn new(critic: Critic, adam: AdamConfig, ema_decay: Option<f64>) -> Self {
        Self {
            critic,
            adam: AdamState::new(adam),
            ema: ema_decay.map(EmaDenominator::new),
        }
    }

    /// One ascent step; returns the pre-update estimate on `batch`.
    pub fn step(&mut self, batch: &PairBatch) -> Result<DvEstimate> {
        let (mut grads, est) = critic_grad(&self.critic, batch, self.ema.as_mut())?;
        for g in &mut grads.layers {
            g.weight.mapv_inplace(|v| -v);
            g.bias.mapv_inplace(|v| -v);
        }
        self.adam.step(self.critic.net_mut(), &grads)?;
        Ok(est)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CriticTrace {
    pub estimates: Vec<DvEstimate>,
}

impl CriticTrace {
    /// Mean of the last 10% of the trace (at least one entry).
    pub fn smoothed(&self) -> f64 {
        smoothed_tail(self.estimates.iter().map(|e| e.value))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "value", "joint_mean", "marginal_logmeanexp"])?;
        for (step, e) in self.estimates.iter().enumerate() {
            w.serialize((step, e.value, e.joint_mean, e.marginal_logmeanexp))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn smoothed_tail(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let tail = n.div_ceil(10);
    values.skip(n - tail).sum::<f64>() / tail as f64
}

/// Runs `steps` ascent steps over batches drawn from `pairs`.
pub fn train_critic<I>(trainer: &mut CriticTrainer, pairs: &mut I, steps: usize) -> Result<CriticTrace>
where
    I: Iterator<Item = PairBatch>,
{
    if steps == 0 {
        return Err(MiError::Config("critic training needs at least one step".into()));
    }
    let mut trace = CriticTrace::default();
    for step in 0..steps {
        let batch = pairs
            .next()
            .ok_or_else(|| MiError::Config("batch stream ended early".into()))?;
        let est = trainer.step(&batch)?;
        if est.value.abs() > DIVERGENCE_LIMIT {
            return Err(MiError::Diverged {
                step,
                value: est.value,
                last_good: trace.estimates.last().map(|e| e.value),
            });
        }
        trace.estimates.push(est);
    }
    Ok(trace)
}

/// Settings for a standalone MI estimate with a freshly initialized critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiEstimatorConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// `None` disables the moving-average gradient correction.
    pub ema_decay: Option<f64>,
    /// Fraction of rows withheld from critic training. When positive, the
    /// estimate is the early-stopped held-out bound instead of the
    /// training-batch trace, which a critic can inflate by memorizing rows.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for MiEstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_CRITIC_HIDDEN.to_vec(),
            lr: 1e-3,
            batch_size: 1024,
            steps: 2000,
            ema_decay: Some(DEFAULT_EMA_DECAY),
            holdout: 0.0,
            seed: 0,
        }
    }
}

impl MiEstimatorConfig {
    /// Defaults with a fifth of the rows held out and an early-stopped
    /// estimate. Use this for wide embeddings, where the training-batch
    /// trace mostly measures memorization.
    pub fn held_out() -> Self {
        Self {
            holdout: 0.2,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MiReport {
    pub estimate: f64,
    /// Held-out evaluations behind `estimate`, empty without a holdout.
    pub heldout: Vec<f64>,
    /// Input width over batch size; DV estimator error grows with it.
    pub stability_index: f64,
    pub trace: CriticTrace,
}

/// Trains a fresh critic between the rows of `embed` and `partner` and
/// returns the smoothed estimate.
pub fn estimate_mi<'a>(embed: ArrayView2<'a, f64>, partner: Partner<'a>, config: &MiEstimatorConfig) -> Result<MiReport> {
    if partner.len() != embed.nrows() {
        return Err(MiError::Config(format!(
            "{} embeddings but {} partners",
            embed.nrows(),
            partner.len()
        )));
    }
    if !(0.0..1.0).contains(&config.holdout) {
        return Err(MiError::Config(format!("holdout = {} must lie in [0, 1)", config.holdout)));
    }
    let spec = CriticSpec::for_partner(embed.ncols(), &partner);
    let mut init = seeded(config.seed, stream::MI_EVAL);
    let critic = Critic::new(spec, &config.hidden, &mut init)?;
    let mut trainer = CriticTrainer::new(critic, AdamConfig::with_lr(config.lr), config.ema_decay);
    let stability_index = spec.input_dim() as f64 / config.batch_size as f64;
    let sampler_rng = seeded(config.seed, stream::MI_EVAL + 1);

    if config.holdout == 0.0 {
        let sampler = PairSampler::with_rng(embed.nrows(), config.batch_size, sampler_rng)
            .map_err(|e| MiError::Config(e.to_string()))?;
        let mut pairs = sampler_stream(sampler, embed, partner);
        let trace = train_critic(&mut trainer, &mut pairs, config.steps)?;
        return Ok(MiReport {
            estimate: trace.smoothed(),
            heldout: Vec::new(),
            stability_index,
            trace,
        });
    }

    let n = embed.nrows();
    let n_test = ((n as f64) * config.holdout).round() as usize;
    if n_test < 2 || n - n_test < 2 {
        return Err(MiError::Config(format!("holdout {} leaves an empty split of {n} rows", config.holdout)));
    }
    let mut split_rng = seeded(config.seed, stream::MI_EVAL + 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut split_rng);
    let (test_rows, train_rows) = order.split_at(n_test);
    let subset = |rows: &[usize]| -> (Array2<f64>, PartnerData) {
        (embed.select(Axis(0), rows), PartnerData::gather(&partner, rows))
    };
    let (train_embed, train_partner) = subset(train_rows);
    let (test_embed, test_partner) = subset(test_rows);
    let sampler = PairSampler::with_rng(train_rows.len(), config.batch_size, sampler_rng)
        .map_err(|e| MiError::Config(e.to_string()))?;
    let mut pairs = sampler_stream(sampler, train_embed.view(), train_partner.view());

    let eval_every = config.steps.div_ceil(HOLDOUT_EVALS).max(1);
    let mut trace = CriticTrace::default();
    let mut heldout = Vec::new();
    let test_partner = test_partner.view();
    for step in 0..config.steps {
        let mut one = train_critic(&mut trainer, &mut pairs, 1).map_err(|e| match e {
            MiError::Diverged { value, .. } => MiError::Diverged {
                step,
                value,
                last_good: trace.estimates.last().map(|e| e.value),
            },
            other => other,
        })?;
        trace.estimates.append(&mut one.estimates);
        if (step + 1) % eval_every == 0 || step + 1 == config.steps {
            let mut perm: Vec<usize> = (0..n_test).collect();
            perm.shuffle(&mut split_rng);
            let index = IndexBatch {
                rows: (0..n_test).collect(),
                perm,
            };
            let batch = PairBatch::gather(test_embed.view(), &test_partner, &index);
            heldout.push(dv_estimate(&trainer.critic, &batch)?.value);
        }
    }
    Ok(MiReport {
        estimate: early_stopped(&heldout),
        heldout,
        stability_index,
        trace,
    })
}

/// Peak of the moving average of held-out evaluations. Once a critic starts
/// memorizing, its held-out bound falls, so the peak marks the best critic
/// seen before overfitting.
fn early_stopped(heldout: &[f64]) -> f64 {
    let w = HOLDOUT_WINDOW.min(heldout.len());
    heldout
        .windows(w)
        .map(|win| win.iter().sum::<f64>() / w as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Moving-average width used to pick the early-stopped estimate.
const HOLDOUT_WINDOW: usize = 5;

/// Upper bound on held-out evaluations per estimate.
const HOLDOUT_EVALS: usize = 100;

/// Owned rows of a [`Partner`].
enum PartnerData {
    Labels(Vec<u8>),
    Raw(Array2<f64>),
}

impl PartnerData {
    fn gather(partner: &Partner<'_>, rows: &[usize]) -> Self {
        match partner {
            Partner::Labels(l) => PartnerData::Labels(rows.iter().map(|&i| l[i]).collect()),
            Partner::Raw(x) => PartnerData::Raw(x.select(Axis(0), rows)),
        }
    }

    fn view(&self) -> Partner<'_> {
        match self {
            PartnerData::Labels(l) => Partner::Labels(l),
            PartnerData::Raw(x) => Partner::Raw(x.view()),
        }
    }
}

pub(crate) fn sampler_stream<'a>(
    mut sampler: PairSampler,
    embed: ArrayView2<'a, f64>,
    partner: Partner<'a>,
) -> impl Iterator<Item = PairBatch> + 'a {
    std::iter::from_fn(move || {
        let index = sampler.next_batch();
        Some(PairBatch::gather(embed, &partner, &index))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Layer;
    use ndarray::array;

    fn constant_critic(c: f64) -> Critic {
        let layer = Layer::new(Array2::zeros((1, 4)), array![c], Activation::Identity);
        Critic::from_net(CriticSpec::for_labels(2), DenseNet::new(vec![layer]).unwrap()).unwrap()
    }

    /// `F(e, y) = ln 2` when the one-hot `e` and `y` agree, `-20` otherwise.
    fn matching_critic() -> Critic {
        let hidden = Layer::new(
            array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]],
            array![-1.0, -1.0],
            Activation::Relu,
        );
        let head = Layer::new(array![[2f64.ln() + 20.0, 2f64.ln() + 20.0]], array![-20.0], Activation::Identity);
        Critic::from_net(CriticSpec::for_labels(2), DenseNet::new(vec![hidden, head]).unwrap()).unwrap()
    }

    fn one_hot_batch(classes: &[u8], perm: Vec<usize>) -> PairBatch {
        let embed = Array2::from_shape_fn((classes.len(), 2), |(i, j)| f64::from(usize::from(classes[i]) == j));
        let index = IndexBatch {
            rows: (0..classes.len()).collect(),
            perm,
        };
        PairBatch::from_embed(embed, &Partner::Labels(classes), &index)
    }

    #[test]
    fn constant_and_zero_critics_give_zero() {
        let batch = one_hot_batch(&[0, 1, 1, 0], vec![1, 0, 3, 2]);
        for c in [0.0, 3.5, -7.0] {
            let est = dv_estimate(&constant_critic(c), &batch).unwrap();
            assert!(est.value.abs() < 1e-12, "{c}: {}", est.value);
        }
    }

    #[test]
    fn matching_critic_over_all_permutations() {
        let classes = [0u8, 1, 0, 1];
        let critic = matching_critic();
        let mut perms = Vec::new();
        for a in 0..4 {
            for b in (0..4).filter(|&b| b != a) {
                for c in (0..4).filter(|&c| c != a && c != b) {
                    perms.push(vec![a, b, c, 6 - a - b - c]);
                }
            }
        }
        assert_eq!(perms.len(), 24);
        for perm in perms {
            let agree = (0..4).filter(|&k| classes[k] == classes[perm[k]]).count() as f64;
            let oracle = 2f64.ln() - ((agree * 2.0 + (4.0 - agree) * (-20f64).exp()) / 4.0).ln();
            let est = dv_estimate(&critic, &one_hot_batch(&classes, perm)).unwrap();
            assert!((est.value - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_critic_approaches_ln2() {
        let n = 65_536;
        let classes: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seeded(3, 0));
        let agree = (0..n).filter(|&k| classes[k] == classes[perm[k]]).count() as f64;
        let est = dv_estimate(&matching_critic(), &one_hot_batch(&classes, perm)).unwrap();
        let n = n as f64;
        let oracle = 2f64.ln() - ((agree * 2.0 + (n - agree) * (-20f64).exp()) / n).ln();
        assert!((est.value - oracle).abs() < 1e-9, "{} vs {oracle}", est.value);
        assert!((est.value - 2f64.ln()).abs() < 0.03, "{}", est.value);
    }

    #[test]
    fn constant_critic_bias_gradient_vanishes() {
        let batch = one_hot_batch(&[0, 1, 1, 0, 1, 0], vec![2, 0, 1, 5, 3, 4]);
        let (grads, _) = critic_grad(&constant_critic(1.3), &batch, None).unwrap();
        assert!(grads.layers[0].bias[0].abs() < 1e-12);
    }

    #[test]
    fn ema_first_call_then_hand_formula() {
        let batch = one_hot_batch(&[0, 1, 1, 0], vec![1, 0, 3, 2]);
        let critic = matching_critic();
        let mut ema = EmaDenominator::new(0.99);
        let (_, first) = critic_grad(&critic, &batch, Some(&mut ema)).unwrap();
        // perm [1,0,3,2] mismatches every row
        let batch_mean = (-20f64).exp();
        assert!((first.ema_denominator - batch_mean).abs() < 1e-20);
        let other = one_hot_batch(&[0, 1, 1, 0], vec![0, 3, 1, 2]);
        let (_, second) = critic_grad(&critic, &other, Some(&mut ema)).unwrap();
        let mean2 = (2.0 * 2.0 + 2.0 * (-20f64).exp()) / 4.0;
        assert!((second.ema_denominator - (0.99 * batch_mean + 0.01 * mean2)).abs() < 1e-15);
    }

    #[test]
    fn clamp_keeps_extreme_critics_finite() {
        let batch = one_hot_batch(&[0, 1, 1, 0], vec![1, 0, 3, 2]);
        let est = dv_estimate(&constant_critic(1e6), &batch).unwrap();
        assert_eq!(est.marginal_logmeanexp, CRITIC_CLAMP);
        assert!(est.value.is_finite());
    }

    #[test]
    fn divergence_aborts_training() {
        let batch = one_hot_batch(&[0, 1, 1, 0], vec![1, 0, 3, 2]);
        let mut trainer = CriticTrainer::new(constant_critic(100.0), AdamConfig::with_lr(1e-3), None);
        let mut pairs = std::iter::repeat(batch);
        let err = train_critic(&mut trainer, &mut pairs, 5).unwrap_err();
        assert!(matches!(err, MiError::Diverged { step: 0, last_good: None, .. }), "{err}");
    }

    #[test]
    fn smoothed_is_tail_mean() {
        assert_eq!(smoothed_tail((1..=20u8).map(f64::from).collect::<Vec<_>>().into_iter()), 19.5);
        assert_eq!(smoothed_tail([4.0].into_iter()), 4.0);
        assert!(smoothed_tail(std::iter::empty()).is_nan());
    }

    #[test]
    fn wrong_width_is_rejected() {
        let critic = Critic::new(CriticSpec::for_labels(3), &[4], &mut seeded(0, 0)).unwrap();
        let batch = one_hot_batch(&[0, 1], vec![1, 0]);
        assert!(matches!(dv_estimate(&critic, &batch), Err(MiError::InputWidth { expected: 5, got: 4 })));
    }

    #[test]
    fn independent_labels_estimate_near_zero() {
        let mut rng = seeded(11, 0);
        let x = Array2::from_shape_simple_fn((4000, 4), || rng.random::<f64>());
        let y: Vec<u8> = (0..4000).map(|_| rng.random_range(0..2)).collect();
        let cfg = MiEstimatorConfig {
            steps: 300,
            hidden: vec![32],
            ..Default::default()
        };
        let r = estimate_mi(x.view(), Partner::Labels(&y), &cfg).unwrap();
        assert!(r.estimate < 0.05, "{}", r.estimate);
        assert!((r.stability_index - 6.0 / 1024.0).abs() < 1e-15);
    }
}
