use super::{
    composite_objective, mi_iteration_schedule, save_wshp, EpochRecord, Result, ShaperEncoder, ShaperError,
    TrainConfig, TrainingLog,
};
use crate::dataset::{EmbeddingDataset, IndexBatch, PairBatch, PairSampler, Partner};
use crate::mi::{dv_embed_grad, dv_estimate, Critic, CriticSpec, CriticTrainer, DvEstimate, DIVERGENCE_LIMIT};
use crate::rng::{seeded, stream};
use crate::tensor::{AdamConfig, AdamState, Gradients};
use ndarray::{Array2, Axis};
use rayon::prelude::*;

/// One MI term of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    /// `I(E; X)`, weighted by γ.
    Keep,
    /// `I(E; T_i)`, weighted by λ_i.
    Task(usize),
    /// `I(E; S_j)`, weighted by μ_j (subtracted).
    Sensitive(usize),
}

struct TermState {
    term: Term,
    /// Signed weight in the maximized objective.
    weight: f64,
    trainer: CriticTrainer,
    sampler: PairSampler,
}

#[derive(Debug, Clone)]
pub struct TermCritic {
    pub term: Term,
    pub name: String,
    pub critic: Critic,
}

/// Encoder gradient for one batch plus the DV estimates it was built from.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// Gradient of the negated objective with respect to encoder parameters.
    pub grads: Gradients,
    /// One entry per term, `None` where the term was skipped (single-class batch).
    pub estimates: Vec<Option<DvEstimate>>,
    pub skipped: usize,
}

/// Alternating optimizer: critic ascent on frozen encodings, then encoder
/// descent through frozen critics.
pub struct ShaperTrainer {
    config: TrainConfig,
    x: Array2<f64>,
    task_labels: Vec<Vec<u8>>,
    sens_labels: Vec<Vec<u8>>,
    task_names: Vec<String>,
    sens_names: Vec<String>,
    encoder: ShaperEncoder,
    encoder_adam: AdamState,
    encoder_sampler: PairSampler,
    terms: Vec<TermState>,
    log: TrainingLog,
    epoch: usize,
}

fn partner<'a>(term: Term, x: &'a Array2<f64>, task: &'a [Vec<u8>], sens: &'a [Vec<u8>]) -> Partner<'a> {
    match term {
        Term::Keep => Partner::Raw(x.view()),
        Term::Task(i) => Partner::Labels(&task[i]),
        Term::Sensitive(j) => Partner::Labels(&sens[j]),
    }
}

impl ShaperTrainer {
    pub fn new(dataset: &EmbeddingDataset, config: TrainConfig) -> Result<Self> {
        config.validate(dataset)?;
        let x = dataset.x_f64();
        let (n, dim) = (dataset.n(), dataset.dim());
        let mut init = seeded(config.seed, stream::ENCODER_INIT);
        let encoder = ShaperEncoder::mlp(&config.encoder_dims(dim), &mut init)?;
        let d = config.output_dim;

        let mut specs: Vec<(Term, f64, CriticSpec)> = Vec::new();
        if config.gamma > 0.0 {
            specs.push((Term::Keep, config.gamma, CriticSpec::for_raw(d, dim)));
        }
        specs.extend(
            config
                .lambdas
                .iter()
                .enumerate()
                .map(|(i, &w)| (Term::Task(i), w, CriticSpec::for_labels(d))),
        );
        specs.extend(
            config
                .mus
                .iter()
                .enumerate()
                .map(|(j, &w)| (Term::Sensitive(j), -w, CriticSpec::for_labels(d))),
        );
        let mut terms = Vec::with_capacity(specs.len());
        for (k, (term, weight, spec)) in specs.into_iter().enumerate() {
            let mut rng = seeded(config.seed, stream::CRITIC_INIT + k as u64);
            let critic = Critic::new(spec, &config.critic_hidden, &mut rng)?;
            let sampler = PairSampler::with_rng(
                n,
                config.batch_size,
                seeded(config.seed, stream::CRITIC_BATCHES + k as u64),
            )?;
            terms.push(TermState {
                term,
                weight,
                trainer: CriticTrainer::new(critic, AdamConfig::with_lr(config.critic_lr), config.ema_decay),
                sampler,
            });
        }
        let encoder_sampler =
            PairSampler::with_rng(n, config.batch_size, seeded(config.seed, stream::ENCODER_BATCHES))?;
        let task_names: Vec<String> = dataset.task_labels().iter().map(|c| c.name.clone()).collect();
        let sens_names: Vec<String> = dataset.sens_labels().iter().map(|c| c.name.clone()).collect();
        Ok(Self {
            encoder_adam: AdamState::new(AdamConfig::with_lr(config.encoder_lr)),
            log: TrainingLog::new(config.gamma > 0.0, task_names.clone(), sens_names.clone()),
            task_labels: dataset.task_labels().iter().map(|c| c.values.clone()).collect(),
            sens_labels: dataset.sens_labels().iter().map(|c| c.values.clone()).collect(),
            task_names,
            sens_names,
            config,
            x,
            encoder,
            encoder_sampler,
            terms,
            epoch: 0,
        })
    }

    pub fn encoder(&self) -> &ShaperEncoder {
        &self.encoder
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn critic(&self, term: Term) -> Option<&Critic> {
        self.terms.iter().find(|t| t.term == term).map(|t| &t.trainer.critic)
    }

    pub fn terms(&self) -> Vec<Term> {
        self.terms.iter().map(|t| t.term).collect()
    }

    fn term_name(&self, term: Term) -> String {
        match term {
            Term::Keep => "keep".to_owned(),
            Term::Task(i) => format!("task:{}", self.task_names[i]),
            Term::Sensitive(j) => format!("sens:{}", self.sens_names[j]),
        }
    }

    pub fn critics(&self) -> Vec<TermCritic> {
        self.terms
            .iter()
            .map(|t| TermCritic {
                term: t.term,
                name: self.term_name(t.term),
                critic: t.trainer.critic.clone(),
            })
            .collect()
    }

    /// Runs `steps` ascent steps on every critic against encodings from the
    /// current (frozen) encoder. Returns the number of skipped batches.
    pub fn critic_phase(&mut self, steps: usize) -> Result<usize> {
        let (x, task, sens, encoder) = (&self.x, &self.task_labels, &self.sens_labels, &self.encoder);
        let epoch = self.epoch;
        let skipped: Vec<usize> = self
            .terms
            .par_iter_mut()
            .map(|state| -> Result<usize> {
                let partner = partner(state.term, x, task, sens);
                let mut skipped = 0;
                for _ in 0..steps {
                    let index = state.sampler.next_batch();
                    if partner.single_class(&index.rows) {
                        skipped += 1;
                        continue;
                    }
                    let embed = encoder.encode(x.select(Axis(0), &index.rows).view())?;
                    let batch = PairBatch::from_embed(embed, &partner, &index);
                    let est = state.trainer.step(&batch)?;
                    if !est.value.is_finite() || est.value.abs() > DIVERGENCE_LIMIT {
                        return Err(ShaperError::Diverged {
                            epoch,
                            reason: format!("critic {:?} estimate {}", state.term, est.value),
                            last_good: Box::new(encoder.clone()),
                        });
                    }
                }
                Ok(skipped)
            })
            .collect::<Result<_>>()?;
        Ok(skipped.into_iter().sum())
    }

    /// Gradient of the negated composite objective for one batch, with all
    /// critics frozen.
    pub fn batch_gradient(&self, index: &IndexBatch) -> Result<BatchGradient> {
        let xb = self.x.select(Axis(0), &index.rows);
        let cache = self.encoder.net().forward_cached(xb.view())?;
        let embed = cache.output();
        let mut upstream = Array2::<f64>::zeros(embed.raw_dim());
        let mut estimates = Vec::with_capacity(self.terms.len());
        let mut skipped = 0;
        for state in &self.terms {
            let partner = partner(state.term, &self.x, &self.task_labels, &self.sens_labels);
            if partner.single_class(&index.rows) {
                skipped += 1;
                estimates.push(None);
                continue;
            }
            let batch = PairBatch::from_embed(embed.clone(), &partner, index);
            if state.weight == 0.0 {
                estimates.push(Some(dv_estimate(&state.trainer.critic, &batch)?));
                continue;
            }
            let (est, grad) = dv_embed_grad(&state.trainer.critic, &batch)?;
            upstream.scaled_add(-state.weight, &grad);
            estimates.push(Some(est));
        }
        let grads = self.encoder.net().backward(&cache, upstream.view())?;
        Ok(BatchGradient {
            grads,
            estimates,
            skipped,
        })
    }

    /// One pass of encoder updates over a fresh epoch of batches. Returns
    /// per-term mean estimates, mean gradient norm and skipped-term count.
    pub fn encoder_phase(&mut self) -> Result<(Vec<f64>, f64, usize)> {
        let batches = self.encoder_sampler.epoch_batches();
        let mut sums = vec![0.0; self.terms.len()];
        let mut counts = vec![0usize; self.terms.len()];
        let mut norm_sum = 0.0;
        let mut skipped = 0;
        for index in &batches {
            let bg = self.batch_gradient(index)?;
            for (k, est) in bg.estimates.iter().enumerate() {
                if let Some(e) = est {
                    sums[k] += e.value;
                    counts[k] += 1;
                }
            }
            skipped += bg.skipped;
            norm_sum += bg.grads.norm();
            self.encoder_adam.step(self.encoder.net_mut(), &bg.grads)?;
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        Ok((means, norm_sum / batches.len() as f64, skipped))
    }

    /// Critic phase, encoder phase and log record for the next epoch.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let epoch = self.epoch;
        let last_good = self.encoder.clone();
        let steps = mi_iteration_schedule(epoch, &self.config.schedule);
        self.encoder_adam.hyper.lr =
            self.config.encoder_lr * self.config.encoder_lr_decay.powi(i32::try_from(epoch).unwrap_or(i32::MAX));
        let critic_skipped = self.critic_phase(steps)?;
        let (means, grad_norm, enc_skipped) = self.encoder_phase()?;

        let mut mi_keep = None;
        let mut mi_task = vec![0.0; self.task_labels.len()];
        let mut mi_sens = vec![0.0; self.sens_labels.len()];
        for (state, &v) in self.terms.iter().zip(&means) {
            match state.term {
                Term::Keep => mi_keep = Some(v),
                Term::Task(i) => mi_task[i] = v,
                Term::Sensitive(j) => mi_sens[j] = v,
            }
        }
        let objective = composite_objective(mi_keep.unwrap_or(0.0), &mi_task, &mi_sens, &self.config)?;
        if !objective.is_finite() || !self.encoder.net().is_finite() {
            return Err(ShaperError::Diverged {
                epoch,
                reason: format!("objective {objective}"),
                last_good: Box::new(last_good),
            });
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|source| super::CheckpointError::Io {
                path: dir.clone(),
                source,
            })?;
            save_wshp(&self.encoder, dir.join(format!("epoch_{epoch:04}.wshp")))?;
        }
        self.log.records.push(EpochRecord {
            epoch,
            mi_keep,
            mi_task,
            mi_sens,
            objective,
            critic_steps_used: steps,
            encoder_grad_norm: grad_norm,
            skipped_terms: critic_skipped + enc_skipped,
        });
        self.epoch += 1;
        Ok(self.log.records.last().expect("just pushed"))
    }

    pub fn finish(self) -> ShaperRun {
        let critics = self.critics();
        ShaperRun {
            encoder: self.encoder,
            log: self.log,
            critics,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShaperRun {
    pub encoder: ShaperEncoder,
    pub log: TrainingLog,
    pub critics: Vec<TermCritic>,
}

/// Trains an encoder on `dataset` for `config.epochs` epochs. The dataset
/// is only read.
pub fn train_shaper(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<ShaperRun> {
    let mut trainer = ShaperTrainer::new(dataset, config.clone())?;
    for _ in 0..config.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
