//! The `mishape` command line: `synth`, `train`, `baseline`, `eval`, `mi`
//! and `inspect`.
//!
//! Every command can read a TOML run configuration (`--config`); flags
//! override file values, and the resolved configuration is written next
//! to the outputs.

use crate::baselines::{dp_noise, random_encoder, DpNoiseConfig};
use crate::dataset::{
    load_embd, save_embd, synth_gaussian_pair, synth_planted, EmbeddingDataset, Partner, SyntheticKind,
    SyntheticRecipe, EMBD_HEADER_LEN,
};
use crate::eval::{
    emit_report, train_probe, tsne_2d, EmbeddingKind, LabelRole, MiComparison, ProbeConfig, ProbeResult,
    ReportInputs, TsneConfig, TsneRows,
};
use crate::mi::{estimate_mi, MiEstimatorConfig};
use crate::shaper::{load_wshp, save_wshp, ShaperTrainer, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "mishape", version, about = "Mutual-information guided embedding projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted dataset as an EMBD file.
    Synth(SynthArgs),
    /// Train an encoder on an EMBD dataset.
    Train(TrainArgs),
    /// Produce a random-projection or DP-noise baseline EMBD file.
    Baseline(BaselineArgs),
    /// Probe AUROCs, MI re-estimation and optional t-SNE for an encoder.
    Eval(EvalArgs),
    /// Estimate MI on a correlated Gaussian pair with known ground truth.
    Mi(MiArgs),
    /// Print the header and label statistics of an EMBD file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Planted,
    GaussianPair,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, env = "MISHAPE_OUT_DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Task weights, one per task label column.
    #[arg(long = "lambda", value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Sensitive weights, one per sensitive label column.
    #[arg(long = "mu", value_delimiter = ',')]
    pub mus: Option<Vec<f64>>,
    #[arg(long)]
    pub encoder_lr: Option<f64>,
    #[arg(long)]
    pub critic_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Save a checkpoint after every epoch under `<out>/checkpoints`.
    #[arg(long)]
    pub checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Random,
    DpNoise,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "MISHAPE_OUT_DIR")]
    pub out: Option<PathBuf>,
    /// Also probe the random-projection and DP-noise baselines.
    #[arg(long)]
    pub baselines: bool,
    /// Skip the fresh-critic MI estimates on original and encoded data.
    #[arg(long)]
    pub no_mi: bool,
    /// Project the encoded embeddings with t-SNE into `tsne.csv`.
    #[arg(long)]
    pub tsne: bool,
    #[arg(long)]
    pub mi_steps: Option<usize>,
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Moving-average decay for the critic gradient; 0 disables it.
    #[arg(long)]
    pub ema: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for `mi_trace.csv` and `mi.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub probe: ProbeConfig,
    #[serde(deserialize_with = "over_held_out")]
    pub mi: MiEstimatorConfig,
    pub tsne: TsneConfig,
    pub baselines: bool,
    pub estimate_mi: bool,
    pub run_tsne: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe: ProbeConfig::default(),
            mi: MiEstimatorConfig::held_out(),
            tsne: TsneConfig::default(),
            baselines: false,
            estimate_mi: true,
            run_tsne: false,
        }
    }
}

/// Reads a partial `[eval.mi]` table on top of the held-out preset, so that
/// unset keys keep the eval defaults rather than the estimator defaults.
fn over_held_out<'de, D: serde::Deserializer<'de>>(d: D) -> Result<MiEstimatorConfig, D::Error> {
    use serde::de::Error;
    let patch = toml::Table::deserialize(d)?;
    let mut base = toml::Table::try_from(MiEstimatorConfig::held_out()).map_err(D::Error::custom)?;
    base.extend(patch);
    base.try_into().map_err(D::Error::custom)
}

/// Contents of a `--config` TOML file. A top-level `seed` replaces every
/// section's seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SyntheticRecipe,
    pub train: TrainConfig,
    pub dp: DpNoiseConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| {
                    usage(format!(
                        "invalid config {}: {}",
                        p.display(),
                        e.to_string().lines().filter(|l| !l.trim().is_empty()).collect::<Vec<_>>().join(" ")
                    ))
                })?
            }
        };
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.train.seed = seed;
        self.dp.seed = seed;
        self.eval.mi.seed = seed;
        self.eval.tsne.seed = seed;
    }

    fn write_snapshot(&self, path: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| runtime(format!("cannot serialize config: {e}")))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
        fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or inputs (exit code 1).
    Usage(String),
    /// Failures while running a valid command (exit code 2).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn runtime(m: impl Into<String>) -> CliError {
    CliError::Runtime(m.into())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| usage(format!("missing --{flag} (or paths.{} in the config)", flag.replace('-', "_"))))
}

fn load_dataset(path: &Path) -> Result<EmbeddingDataset, CliError> {
    load_embd(path).map_err(|e| usage(e.to_string()))
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Baseline(a) => baseline(a),
        Command::Eval(a) => eval(a),
        Command::Mi(a) => mi(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let r = &mut cfg.synth;
    set(
        &mut r.kind,
        a.kind.map(|k| match k {
            KindArg::Planted => SyntheticKind::Planted,
            KindArg::GaussianPair => SyntheticKind::GaussianPair,
        }),
    );
    set(&mut r.n, a.n);
    set(&mut r.dim, a.dim);
    set(&mut r.latent_dim, a.latent_dim);
    set(&mut r.noise_std, a.noise_std);
    set(&mut r.label_noise, a.label_noise);
    if r.kind != SyntheticKind::Planted {
        return Err(usage(
            "synth.kind: gaussian pairs carry no labels and cannot be stored as EMBD; use the `mi` command",
        ));
    }
    let ds = synth_planted(r).map_err(|e| usage(format!("synth: {e}")))?;
    save_embd(&ds, &a.out).map_err(|e| runtime(e.to_string()))?;
    cfg.write_snapshot(&a.out.with_extension("resolved.toml"))?;
    println!("wrote {} ({} × {})", a.out.display(), ds.n(), ds.dim());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let data = required(a.data, &cfg.paths.dataset, "data")?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.output_dim, a.output_dim);
    set(&mut t.gamma, a.gamma);
    set(&mut t.lambdas, a.lambdas);
    set(&mut t.mus, a.mus);
    set(&mut t.encoder_lr, a.encoder_lr);
    set(&mut t.critic_lr, a.critic_lr);
    set(&mut t.batch_size, a.batch_size);
    if a.checkpoints {
        t.checkpoint_dir = Some(out.join("checkpoints"));
    }
    cfg.paths.dataset = Some(data.clone());
    cfg.paths.out_dir = Some(out.clone());
    cfg.paths.checkpoint = Some(out.join("encoder.wshp"));

    let ds = load_dataset(&data)?;
    cfg.train.validate(&ds).map_err(|e| usage(format!("train: {e}")))?;
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    cfg.write_snapshot(&out.join("resolved_config.toml"))?;

    let mut trainer = ShaperTrainer::new(&ds, cfg.train.clone()).map_err(|e| usage(e.to_string()))?;
    for _ in 0..cfg.train.epochs {
        let r = trainer.run_epoch().map_err(|e| runtime(e.to_string()))?;
        eprintln!(
            "epoch {:>3}  objective {:+.4}  task {:?}  sens {:?}",
            r.epoch, r.objective, r.mi_task, r.mi_sens
        );
    }
    let run = trainer.finish();
    save_wshp(&run.encoder, out.join("encoder.wshp")).map_err(|e| runtime(e.to_string()))?;
    let path = out.join("training_log.csv");
    let file = fs::File::create(&path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    run.log.write_csv(file).map_err(|e| runtime(e.to_string()))?;
    let inputs = ReportInputs {
        config: serde_json::to_value(&cfg).expect("config serializes"),
        log: Some(&run.log),
        probes: &[],
        mi: None,
        tsne: None,
    };
    emit_report(&inputs, &out).map_err(|e| runtime(e.to_string()))?;
    println!("wrote {}", out.join("encoder.wshp").display());
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let data = required(a.data, &cfg.paths.dataset, "data")?;
    set(&mut cfg.train.output_dim, a.output_dim);
    set(&mut cfg.dp.clip_norm, a.clip_norm);
    set(&mut cfg.dp.epsilon, a.epsilon);
    set(&mut cfg.dp.delta, a.delta);
    cfg.paths.dataset = Some(data.clone());
    let ds = load_dataset(&data)?;
    let x = ds.x_f64();
    let (out_x, tag) = match a.kind {
        BaselineKind::Random => {
            let enc = random_encoder(ds.dim(), cfg.train.output_dim, cfg.train.seed)
                .map_err(|e| usage(format!("baseline: {e}")))?;
            (enc.encode(x.view()).map_err(|e| runtime(e.to_string()))?, "random")
        }
        BaselineKind::DpNoise => (
            dp_noise(x.view(), &cfg.dp).map_err(|e| usage(format!("baseline: {e}")))?,
            "dp-noise",
        ),
    };
    let noisy = ds
        .with_x(out_x.mapv(|v| v as f32), format!("{tag}:{}", data.display()))
        .map_err(|e| runtime(e.to_string()))?;
    save_embd(&noisy, &a.out).map_err(|e| runtime(e.to_string()))?;
    cfg.write_snapshot(&a.out.with_extension("resolved.toml"))?;
    println!("wrote {} ({} × {})", a.out.display(), noisy.n(), noisy.dim());
    Ok(())
}

fn mi_comparison(ds: &EmbeddingDataset, x: &Array2<f64>, e: &Array2<f64>, cfg: &MiEstimatorConfig) -> Result<MiComparison, CliError> {
    let task = &ds.task_labels()[0].values;
    let sens = &ds.sens_labels()[0].values;
    let est = |m: &Array2<f64>, labels: &[u8]| {
        estimate_mi(m.view(), Partner::Labels(labels), cfg)
            .map(|r| r.estimate)
            .map_err(|err| runtime(err.to_string()))
    };
    Ok(MiComparison {
        original_task: est(x, task)?,
        original_sensitive: est(x, sens)?,
        encoded_task: est(e, task)?,
        encoded_sensitive: est(e, sens)?,
    })
}

fn probe_all(
    ds: &EmbeddingDataset,
    features: &Array2<f64>,
    kind: EmbeddingKind,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<ProbeResult>, CliError> {
    let columns = ds
        .task_labels()
        .iter()
        .map(|c| (c, LabelRole::Task))
        .chain(ds.sens_labels().iter().map(|c| (c, LabelRole::Sensitive)));
    columns
        .map(|(c, role)| {
            train_probe(features.view(), &c.values, &c.name, role, kind, cfg, seed).map_err(|e| runtime(e.to_string()))
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let data = required(a.data, &cfg.paths.dataset, "data")?;
    let checkpoint = required(a.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let out = required(a.out, &cfg.paths.out_dir, "out")?;
    let e = &mut cfg.eval;
    e.baselines |= a.baselines;
    e.run_tsne |= a.tsne;
    if a.no_mi {
        e.estimate_mi = false;
    }
    set(&mut e.mi.steps, a.mi_steps);
    set(&mut e.probe.epochs, a.probe_epochs);
    cfg.paths.dataset = Some(data.clone());
    cfg.paths.checkpoint = Some(checkpoint.clone());
    cfg.paths.out_dir = Some(out.clone());

    let ds = load_dataset(&data)?;
    let encoder = load_wshp(&checkpoint).map_err(|e| usage(e.to_string()))?;
    if encoder.input_dim() != ds.dim() {
        return Err(usage(format!(
            "checkpoint expects {} inputs but the dataset has dimension {}",
            encoder.input_dim(),
            ds.dim()
        )));
    }
    if ds.task_labels().is_empty() || ds.sens_labels().is_empty() {
        return Err(usage("eval needs at least one task and one sensitive label column"));
    }
    fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
    cfg.write_snapshot(&out.join("resolved_config.toml"))?;

    let x = ds.x_f64();
    let encoded = encoder.encode(x.view()).map_err(|e| runtime(e.to_string()))?;
    let seed = cfg.train.seed;
    let mut probes = probe_all(&ds, &x, EmbeddingKind::Original, &cfg.eval.probe, seed)?;
    probes.extend(probe_all(&ds, &encoded, EmbeddingKind::Encoded, &cfg.eval.probe, seed)?);
    if cfg.eval.baselines {
        let rand = random_encoder(ds.dim(), encoder.output_dim(), seed).map_err(|e| usage(e.to_string()))?;
        let r = rand.encode(x.view()).map_err(|e| runtime(e.to_string()))?;
        probes.extend(probe_all(&ds, &r, EmbeddingKind::Random, &cfg.eval.probe, seed)?);
        let noisy = dp_noise(x.view(), &cfg.dp).map_err(|e| usage(e.to_string()))?;
        probes.extend(probe_all(&ds, &noisy, EmbeddingKind::Noisy, &cfg.eval.probe, seed)?);
    }
    let mi = if cfg.eval.estimate_mi {
        Some(mi_comparison(&ds, &x, &encoded, &cfg.eval.mi)?)
    } else {
        None
    };
    let tsne = if cfg.eval.run_tsne {
        Some(tsne_2d(encoded.view(), &cfg.eval.tsne).map_err(|e| usage(e.to_string()))?)
    } else {
        None
    };
    let inputs = ReportInputs {
        config: serde_json::to_value(&cfg).expect("config serializes"),
        log: None,
        probes: &probes,
        mi,
        tsne: tsne.as_ref().map(|t| TsneRows {
            coords: &t.coords,
            task: &ds.task_labels()[0].values,
            sensitive: &ds.sens_labels()[0].values,
        }),
    };
    let report = emit_report(&inputs, &out).map_err(|e| runtime(e.to_string()))?;
    for p in &report.probes {
        println!("{:<9} {:<12} auroc {:.4}", p.embedding_kind.as_str(), p.label_name, p.auroc);
    }
    if let Some(pct) = report.sensitive_mi_reduction_pct {
        println!("sensitive MI reduction {pct:.2}%");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MiSummary {
    rho: f64,
    d: usize,
    true_mi: f64,
    estimate: f64,
    stability_index: f64,
}

fn mi(a: MiArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let mut recipe = cfg.synth.clone();
    recipe.kind = SyntheticKind::GaussianPair;
    set(&mut recipe.rho, a.rho);
    set(&mut recipe.d, a.d);
    set(&mut recipe.n, a.n);
    let m = &mut cfg.eval.mi;
    set(&mut m.steps, a.steps);
    set(&mut m.batch_size, a.batch_size);
    set(&mut m.lr, a.lr);
    if let Some(ema) = a.ema {
        m.ema_decay = (ema > 0.0).then_some(ema);
    }
    let pair = synth_gaussian_pair(&recipe).map_err(|e| usage(format!("mi: {e}")))?;
    let report = estimate_mi(pair.z.view(), Partner::Raw(pair.y.view()), &cfg.eval.mi).map_err(|e| match e {
        crate::mi::MiError::Config(m) => usage(format!("mi: {m}")),
        other => runtime(other.to_string()),
    })?;
    let summary = MiSummary {
        rho: pair.rho,
        d: recipe.d,
        true_mi: pair.true_mi,
        estimate: report.estimate,
        stability_index: report.stability_index,
    };
    println!(
        "rho {:.3}  d {}  true {:.4}  estimate {:.4}",
        summary.rho, summary.d, summary.true_mi, summary.estimate
    );
    if let Some(out) = a.out {
        cfg.synth = recipe;
        fs::create_dir_all(&out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))?;
        cfg.write_snapshot(&out.join("resolved_config.toml"))?;
        let path = out.join("mi_trace.csv");
        let file = fs::File::create(&path).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        report.trace.write_csv(file).map_err(|e| runtime(e.to_string()))?;
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        fs::write(out.join("mi.json"), json + "\n").map_err(|e| runtime(e.to_string()))?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?;
    let x = ds.x();
    let norms: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt())
        .collect();
    let mean_norm = norms.iter().sum::<f64>() / norms.len() as f64;
    println!("file        {}", a.data.display());
    println!("format      EMBD v1, {EMBD_HEADER_LEN}-byte header");
    println!("rows        {}", ds.n());
    println!("dim         {}", ds.dim());
    println!("mean norm   {mean_norm:.4}");
    for (role, cols) in [("task", ds.task_labels()), ("sensitive", ds.sens_labels())] {
        for c in cols {
            println!(
                "{role:<11} {:<16} positives {} / {}",
                c.name,
                c.positives(),
                c.values.len()
            );
        }
    }
    Ok(())
}
