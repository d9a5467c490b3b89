//! Config-driven experiment runner: declarative run descriptions, the
//! training loop, and the file outputs (config echo, epoch time series,
//! calibration reports, OOD and perturbation summaries).
//!
//! A run is a pure function of its config and seed: datasets come from a
//! seeded generator or files, model init and every stochastic training choice
//! (shuffles, permutations, mixing weights, dropout masks) draw from one
//! ChaCha stream seeded by the run seed, and outputs are written with
//! deterministic formatting. Rerunning a config+seed reproduces every output
//! file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, MixKind, MixPolicy, SmoothingPolicy, SoftLabelBatch};
use crate::calibrate::{self, CalibrationReport, EpochTracker, TEMPERATURE_BOUNDS};
use crate::data::{self, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{self, MixAt, MlpModel, Mode};
use crate::ood::{self, OodReport, PerturbationSweep, Predictor};
use crate::optim::SgdState;
use crate::tensor::Tensor;

// ── Config ───────────────────────────────────────────────────────────

/// Where the data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Seeded synthetic Gaussian clusters.
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        centers_spread: f64,
        within_std: f64,
        seed: u64,
    },
    /// IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// Numeric CSV with a header and a label column.
    Csv { path: PathBuf, label_column: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; the input and output sizes come from the data.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_schedule() -> Vec<(usize, f64)> {
    vec![(60, 2.0), (120, 2.0), (160, 2.0)]
}

/// Which checkpoint the final report evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCheckpoint {
    /// Highest validation accuracy (ties resolve to the earliest epoch).
    Best,
    Final,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub nesterov: bool,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// `(epoch, divisor)` milestones applied cumulatively.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<(usize, f64)>,
    #[serde(default = "default_eval_checkpoint")]
    pub eval_checkpoint: EvalCheckpoint,
}

fn default_eval_checkpoint() -> EvalCheckpoint {
    EvalCheckpoint::Best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixKindConfig {
    None,
    Mixup,
    FeatureOnly,
    Manifold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    pub kind: MixKindConfig,
    #[serde(default)]
    pub alpha: f64,
    /// Layer indices eligible for manifold mixing (0 = input). Empty means
    /// every layer.
    #[serde(default)]
    pub eligible_layers: Vec<usize>,
    #[serde(default)]
    pub per_sample_lambda: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            kind: MixKindConfig::None,
            alpha: 0.0,
            eligible_layers: Vec::new(),
            per_sample_lambda: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKindConfig {
    None,
    Epsilon,
    Erl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    pub kind: SmoothingKindConfig,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_kappa() -> f64 {
    0.1
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            kind: SmoothingKindConfig::None,
            epsilon: default_epsilon(),
            kappa: default_kappa(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    15
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorConfig {
    Plain,
    Temperature,
    McDropout,
}

impl PredictorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorConfig::Plain => "plain",
            PredictorConfig::Temperature => "temperature",
            PredictorConfig::McDropout => "mc_dropout",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    /// "gaussian" for matched-moments noise, "dataset" for `[ood.dataset]`.
    #[serde(default = "default_ood_source")]
    pub source: String,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default = "default_predictor")]
    pub predictor: PredictorConfig,
    #[serde(default = "default_mc_passes")]
    pub mc_passes: usize,
    /// Noise sample count; defaults to the in-distribution set size.
    #[serde(default)]
    pub noise_n: Option<usize>,
}

fn default_ood_source() -> String {
    "gaussian".into()
}
fn default_predictor() -> PredictorConfig {
    PredictorConfig::Plain
}
fn default_mc_passes() -> usize {
    10
}

impl Default for OodConfig {
    fn default() -> Self {
        OodConfig {
            source: default_ood_source(),
            dataset: None,
            predictor: default_predictor(),
            mc_passes: default_mc_passes(),
            noise_n: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    #[serde(default = "default_mu_grid")]
    pub mu_grid: Vec<f64>,
    #[serde(default = "default_directions")]
    pub directions_per_image: usize,
    #[serde(default = "default_perturb_predictors")]
    pub predictors: Vec<PredictorConfig>,
}

fn default_mu_grid() -> Vec<f64> {
    vec![0.0, 0.01, 0.1, 1.0, 10.0, 100.0]
}
fn default_directions() -> usize {
    1
}
fn default_perturb_predictors() -> Vec<PredictorConfig> {
    vec![PredictorConfig::Plain, PredictorConfig::Temperature]
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            mu_grid: default_mu_grid(),
            directions_per_image: default_directions(),
            predictors: default_perturb_predictors(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyConfig {
    #[serde(default = "default_entropy_alpha")]
    pub alpha: f64,
    #[serde(default = "default_entropy_samples")]
    pub samples: usize,
    #[serde(default)]
    pub collision_prob: f64,
    #[serde(default = "default_entropy_bins")]
    pub bins: usize,
}

fn default_entropy_alpha() -> f64 {
    1.0
}
fn default_entropy_samples() -> usize {
    1_000_000
}
fn default_entropy_bins() -> usize {
    30
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig {
            alpha: default_entropy_alpha(),
            samples: default_entropy_samples(),
            collision_prob: 0.0,
            bins: default_entropy_bins(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: default_alphas(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_normalize() -> bool {
    true
}

/// Full declarative description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Standardize features with training-split statistics.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub ood: OodConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Format(msg) => Error::format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(format!("config echo: {e}")))
    }

    /// Reject configs that violate the documented invariants, naming the
    /// offending field.
    pub fn validate(&self) -> Result<()> {
        if self.train.epochs == 0 {
            return Err(Error::validation("train.epochs must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(Error::validation(
                "train.batch_size must be at least 1",
            ));
        }
        if self.mix.alpha < 0.0 {
            return Err(Error::validation("mix.alpha must be nonnegative"));
        }
        if self.mix.kind != MixKindConfig::None && self.smoothing.kind != SmoothingKindConfig::None
        {
            return Err(Error::validation(
                "mix.kind and smoothing.kind cannot both be active; pick one",
            ));
        }
        if self.mix.per_sample_lambda && self.mix.kind == MixKindConfig::Manifold {
            return Err(Error::validation(
                "mix.per_sample_lambda is not supported with manifold mixing",
            ));
        }
        if !(0.0..1.0).contains(&self.smoothing.epsilon) {
            return Err(Error::validation(
                "smoothing.epsilon must be in [0,1)",
            ));
        }
        if self.smoothing.kappa < 0.0 {
            return Err(Error::validation(
                "smoothing.kappa must be nonnegative",
            ));
        }
        if self.metrics.bins == 0 {
            return Err(Error::validation("metrics.bins must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds must list at least one seed"));
        }
        if self.ood.source != "gaussian" && self.ood.source != "dataset" {
            return Err(Error::validation(format!(
                "ood.source must be \"gaussian\" or \"dataset\", got {:?}",
                self.ood.source
            )));
        }
        if self.ood.source == "dataset" && self.ood.dataset.is_none() {
            return Err(Error::validation(
                "ood.source = \"dataset\" needs an [ood.dataset] section",
            ));
        }
        Ok(())
    }

    /// The mixing policy, with empty manifold eligibility defaulting to every
    /// layer of the configured model.
    pub fn mix_policy(&self) -> MixPolicy {
        let kind = match self.mix.kind {
            MixKindConfig::None => MixKind::None,
            MixKindConfig::Mixup => MixKind::Mixup,
            MixKindConfig::FeatureOnly => MixKind::FeatureOnlyMixup,
            MixKindConfig::Manifold => MixKind::ManifoldMixup,
        };
        let eligible_layers = if kind == MixKind::ManifoldMixup && self.mix.eligible_layers.is_empty()
        {
            (0..=self.model.hidden.len()).collect()
        } else {
            self.mix.eligible_layers.clone()
        };
        MixPolicy {
            kind,
            alpha: self.mix.alpha,
            eligible_layers,
            per_sample_lambda: self.mix.per_sample_lambda,
        }
    }

    pub fn smoothing_policy(&self) -> SmoothingPolicy {
        match self.smoothing.kind {
            SmoothingKindConfig::None => SmoothingPolicy::None,
            SmoothingKindConfig::Epsilon => SmoothingPolicy::Epsilon(self.smoothing.epsilon),
            SmoothingKindConfig::Erl => SmoothingPolicy::Erl(self.smoothing.kappa),
        }
    }
}

// ── Data assembly ────────────────────────────────────────────────────

fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Blobs {
            classes,
            per_class,
            dim,
            centers_spread,
            within_std,
            seed,
        } => data::make_blobs(*classes, *per_class, *dim, *centers_spread, *within_std, *seed),
        DatasetConfig::Idx { images, labels } => data::load_idx(images, labels),
        DatasetConfig::Csv { path, label_column } => data::load_csv(path, label_column),
    }
}

/// Train/val/test splits, normalized with training statistics when the
/// config asks for it.
pub fn build_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let full = load_dataset(&cfg.dataset)?;
    let spec = SplitSpec {
        train: cfg.split.train,
        val: cfg.split.val,
        test: cfg.split.test,
        seed: cfg.split.seed,
    };
    let (train, val, test) = data::split(&full, &spec)?;
    if !cfg.normalize {
        return Ok((train, val, test));
    }
    let stats = data::normalize_stats(&train)?;
    Ok((
        train.normalized(&stats)?,
        val.normalized(&stats)?,
        test.normalized(&stats)?,
    ))
}

// ── Training ─────────────────────────────────────────────────────────

/// In-memory result of one training run.
pub struct TrainedRun {
    pub model_final: MlpModel,
    pub model_best: MlpModel,
    /// 1-based epoch whose checkpoint is `model_best`.
    pub best_epoch: usize,
    pub tracker: EpochTracker,
    /// Report of the configured checkpoint on the test split.
    pub report: CalibrationReport,
}

fn draw_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// One batch's loss, recorded on a tape and differentiated.
fn batch_step(
    model: &MlpModel,
    x: &Tensor,
    labels: &[usize],
    mix: &MixPolicy,
    smoothing: &SmoothingPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, nn::Gradients)> {
    let k = model.n_classes();
    // Alpha zero recovers unmixed training exactly: no permutation or
    // mixing weight is drawn, so the run is bitwise identical to kind=none.
    let mixing = mix.kind != MixKind::None && mix.alpha > 0.0;

    let (pass, targets) = if !mixing {
        let targets = match smoothing {
            SmoothingPolicy::Epsilon(e) => SoftLabelBatch::from_epsilon(labels, *e, k)?,
            _ => SoftLabelBatch::from_hard(labels, k)?,
        };
        let pass = nn::forward(model, x, Mode::Train, Some(rng))?;
        (pass, targets)
    } else {
        let perm = draw_permutation(x.rows(), rng);
        match mix.kind {
            MixKind::Mixup => {
                let y = SoftLabelBatch::from_hard(labels, k)?;
                let (xm, ym) = if mix.per_sample_lambda {
                    let lambdas: Result<Vec<f64>> = (0..x.rows())
                        .map(|_| augment::sample_lambda(mix.alpha, rng))
                        .collect();
                    augment::mixup_batch_per_sample(x, &y, &perm, &lambdas?)?
                } else {
                    let lambda = augment::sample_lambda(mix.alpha, rng)?;
                    augment::mixup_batch(x, &y, &perm, lambda)?
                };
                let pass = nn::forward(model, &xm, Mode::Train, Some(rng))?;
                (pass, ym)
            }
            MixKind::FeatureOnlyMixup => {
                let (xm, hard) = if mix.per_sample_lambda {
                    let lambdas: Result<Vec<f64>> = (0..x.rows())
                        .map(|_| augment::sample_lambda(mix.alpha, rng))
                        .collect();
                    let lambdas = lambdas?;
                    let xm = x.mix_rows_per_sample(&perm, &lambdas)?;
                    let hard: Vec<usize> = labels
                        .iter()
                        .enumerate()
                        .map(|(i, &l)| if lambdas[i] >= 0.5 { l } else { labels[perm[i]] })
                        .collect();
                    (xm, hard)
                } else {
                    let lambda = augment::sample_lambda(mix.alpha, rng)?;
                    augment::feature_only_mixup_batch(x, labels, &perm, lambda)?
                };
                let targets = SoftLabelBatch::from_hard(&hard, k)?;
                let pass = nn::forward(model, &xm, Mode::Train, Some(rng))?;
                (pass, targets)
            }
            MixKind::ManifoldMixup => {
                let lambda = augment::sample_lambda(mix.alpha, rng)?;
                let layer = mix.eligible_layers[rng.random_range(0..mix.eligible_layers.len())];
                let y = SoftLabelBatch::from_hard(labels, k)?;
                let ym = SoftLabelBatch::new(y.tensor().mix_rows(&perm, lambda)?)?;
                let mix_at = MixAt {
                    layer,
                    perm,
                    lambda,
                };
                let pass = nn::forward_mixed(model, x, Some(&mix_at), Mode::Train, Some(rng))?;
                (pass, ym)
            }
            MixKind::None => unreachable!("mixing flag checked above"),
        }
    };

    let mut pass = pass;
    let loss_node = match smoothing {
        SmoothingPolicy::Erl(kappa) => {
            augment::erl_loss(&mut pass.tape, pass.logits, &targets, *kappa)?
        }
        _ => pass.tape.soft_cross_entropy(pass.logits, targets.tensor())?,
    };
    let loss = pass.tape.scalar(loss_node)?;
    let grads = nn::backward(model, &pass.tape, loss_node)?;
    Ok((loss, grads))
}

/// Train a model under the configured policy, tracking per-epoch validation
/// calibration. Everything stochastic draws from one stream seeded by `seed`.
pub fn train_model(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
) -> Result<TrainedRun> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::validation(format!(
            "all splits must be nonempty (train {}, val {}, test {})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let mut layer_sizes = vec![train.dim()];
    layer_sizes.extend_from_slice(&cfg.model.hidden);
    layer_sizes.push(train.n_classes());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MlpModel::init_with_rng(layer_sizes, cfg.model.dropout, &mut rng)?;
    let mix = cfg.mix_policy();
    mix.validate(model.n_layers())?;
    let smoothing = cfg.smoothing_policy();
    smoothing.validate()?;
    let mut sgd = SgdState::new(
        &model,
        cfg.train.learning_rate,
        cfg.train.momentum,
        cfg.train.nesterov,
        cfg.train.weight_decay,
        cfg.train.schedule.clone(),
    )?;

    let n = train.len();
    let dim = train.dim();
    let mut tracker = EpochTracker::new();
    let mut best_epoch = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    let mut model_best = model.clone();

    for epoch in 0..cfg.train.epochs {
        let order = draw_permutation(n, &mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.train.batch_size) {
            let mut xdata = Vec::with_capacity(chunk.len() * dim);
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                xdata.extend_from_slice(train.features().row(i));
                labels.push(train.labels()[i]);
            }
            let x = Tensor::new(vec![chunk.len(), dim], xdata)?;
            let (loss, grads) = batch_step(&model, &x, &labels, &mix, &smoothing, &mut rng)?;
            sgd.step(&mut model, &grads, epoch)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / n as f64;
        let row = tracker.track_epoch(&model, val, epoch + 1, cfg.metrics.bins, train_loss)?;
        if row.accuracy > best_acc {
            best_acc = row.accuracy;
            best_epoch = epoch + 1;
            model_best = model.clone();
        }
    }

    let eval_model = match cfg.train.eval_checkpoint {
        EvalCheckpoint::Best => &model_best,
        EvalCheckpoint::Final => &model,
    };
    let report = calibrate::evaluate(eval_model, test, cfg.metrics.bins)?;
    Ok(TrainedRun {
        model_final: model,
        model_best,
        best_epoch,
        tracker,
        report,
    })
}

// ── File plumbing ────────────────────────────────────────────────────

/// Create `dir` if needed; refuse to reuse a populated directory.
pub fn prepare_outdir(dir: &Path) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::validation(format!(
                "output path {} exists and is not a directory",
                dir.display()
            )));
        }
        if fs::read_dir(dir)?.next().is_some() {
            return Err(Error::validation(format!(
                "output directory {} is not empty; refusing to overwrite",
                dir.display()
            )));
        }
    } else {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(model)
        .map_err(|e| Error::format(format!("model serialization: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    if !path.exists() {
        return Err(Error::usage(format!(
            "model file {} does not exist",
            path.display()
        )));
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: model parse: {e}", path.display())))
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

// ── Runners ──────────────────────────────────────────────────────────

/// Files produced by [`run_train`].
pub struct TrainOutcome {
    pub run: TrainedRun,
    pub model_best_path: PathBuf,
    pub model_final_path: PathBuf,
}

/// Full training run: echoes the resolved config, trains, and writes the
/// epoch time series, final calibration report, reliability CSV, and both
/// checkpoints into `outdir`.
pub fn run_train(cfg: &ExperimentConfig, seed: u64, outdir: &Path) -> Result<TrainOutcome> {
    prepare_outdir(outdir)?;
    echo_config(cfg, outdir)?;
    let (train, val, test) = build_splits(cfg)?;
    let run = train_model(cfg, seed, &train, &val, &test)?;

    fs::write(outdir.join("epochs.csv"), run.tracker.to_csv())?;
    fs::write(outdir.join("report.txt"), run.report.to_report_string())?;
    fs::write(
        outdir.join("reliability.csv"),
        run.report.to_reliability_csv(),
    )?;
    let model_best_path = outdir.join("model_best.json");
    let model_final_path = outdir.join("model_final.json");
    save_model(&run.model_best, &model_best_path)?;
    save_model(&run.model_final, &model_final_path)?;
    Ok(TrainOutcome {
        run,
        model_best_path,
        model_final_path,
    })
}

/// Evaluate a saved model on the config's test split, writing the report
/// files when `outdir` is given.
pub fn run_evaluate(
    cfg: &ExperimentConfig,
    model: &MlpModel,
    outdir: Option<&Path>,
) -> Result<CalibrationReport> {
    let (_, _, test) = build_splits(cfg)?;
    let report = calibrate::evaluate(model, &test, cfg.metrics.bins)?;
    if let Some(dir) = outdir {
        prepare_outdir(dir)?;
        echo_config(cfg, dir)?;
        fs::write(dir.join("report.txt"), report.to_report_string())?;
        fs::write(dir.join("reliability.csv"), report.to_reliability_csv())?;
    }
    Ok(report)
}

/// One row of an alpha sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub alpha: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub ece: f64,
    pub oe: f64,
}

/// Aggregate over seeds for one alpha.
#[derive(Debug, Clone)]
pub struct SweepAggregate {
    pub alpha: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub oe_mean: f64,
    pub oe_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train and evaluate once per (alpha, seed), writing per-run rows and
/// per-alpha aggregates (mean and sample standard deviation across seeds).
pub fn run_alpha_sweep(
    cfg: &ExperimentConfig,
    alphas: &[f64],
    outdir: &Path,
) -> Result<(Vec<SweepRow>, Vec<SweepAggregate>)> {
    if alphas.len() < 2 {
        return Err(Error::validation(
            "an alpha sweep needs at least two alpha values",
        ));
    }
    prepare_outdir(outdir)?;
    echo_config(cfg, outdir)?;
    let (train, val, test) = build_splits(cfg)?;

    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for &alpha in alphas {
        let mut run_cfg = cfg.clone();
        run_cfg.mix.alpha = alpha;
        if run_cfg.mix.kind == MixKindConfig::None {
            run_cfg.mix.kind = MixKindConfig::Mixup;
        }
        let mut accs = Vec::new();
        let mut eces = Vec::new();
        let mut oes = Vec::new();
        for &seed in &cfg.seeds {
            let run = train_model(&run_cfg, seed, &train, &val, &test)?;
            rows.push(SweepRow {
                alpha,
                seed,
                accuracy: run.report.accuracy,
                ece: run.report.ece,
                oe: run.report.oe,
            });
            accs.push(run.report.accuracy);
            eces.push(run.report.ece);
            oes.push(run.report.oe);
        }
        let (am, asd) = mean_std(&accs);
        let (em, esd) = mean_std(&eces);
        let (om, osd) = mean_std(&oes);
        aggregates.push(SweepAggregate {
            alpha,
            accuracy_mean: am,
            accuracy_std: asd,
            ece_mean: em,
            ece_std: esd,
            oe_mean: om,
            oe_std: osd,
        });
    }

    let mut csv = String::from("alpha,seed,accuracy,ece,oe\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.alpha, r.seed, r.accuracy, r.ece, r.oe
        ));
    }
    fs::write(outdir.join("alpha_sweep.csv"), csv)?;

    let mut agg = String::from(
        "alpha,accuracy_mean,accuracy_std,ece_mean,ece_std,oe_mean,oe_std\n",
    );
    for a in &aggregates {
        agg.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            a.alpha, a.accuracy_mean, a.accuracy_std, a.ece_mean, a.ece_std, a.oe_mean, a.oe_std
        ));
    }
    fs::write(outdir.join("alpha_sweep_mean.csv"), agg)?;
    Ok((rows, aggregates))
}

/// Resolve a predictor config against a trained model and the validation
/// split (temperature is fit on validation logits; MC dropout derives its
/// stream from the run seed).
pub fn resolve_predictor(
    which: PredictorConfig,
    model: &MlpModel,
    val: &Dataset,
    mc_passes: usize,
    seed: u64,
) -> Result<(Predictor, Option<calibrate::TemperatureFit>)> {
    match which {
        PredictorConfig::Plain => Ok((Predictor::Plain, None)),
        PredictorConfig::Temperature => {
            let logits = model.predict(val.features())?;
            let fit = calibrate::fit_temperature(&logits, val.labels(), TEMPERATURE_BOUNDS)?;
            Ok((Predictor::Temperature(fit.temperature), Some(fit)))
        }
        PredictorConfig::McDropout => Ok((
            Predictor::McDropout {
                passes: mc_passes,
                seed: seed.wrapping_add(0x4d43_4452),
            },
            None,
        )),
    }
}

/// Out-of-distribution evaluation of a trained model: the test split against
/// either matched-moments Gaussian noise or a configured dataset, under the
/// configured predictor.
pub fn run_ood(
    cfg: &ExperimentConfig,
    model: &MlpModel,
    seed: u64,
    outdir: &Path,
) -> Result<OodReport> {
    prepare_outdir(outdir)?;
    echo_config(cfg, outdir)?;
    let (train, val, test) = build_splits(cfg)?;

    let out_features = match cfg.ood.source.as_str() {
        "gaussian" => {
            // Per-feature moments of the training split the model saw.
            let (n, dim) = (train.len(), train.dim());
            let mut mean = vec![0.0; dim];
            for i in 0..n {
                for (d, v) in train.features().row(i).iter().enumerate() {
                    mean[d] += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            let mut var = vec![0.0; dim];
            for i in 0..n {
                for (d, v) in train.features().row(i).iter().enumerate() {
                    let diff = v - mean[d];
                    var[d] += diff * diff;
                }
            }
            for v in var.iter_mut() {
                *v /= n as f64;
            }
            let n_noise = cfg.ood.noise_n.unwrap_or(test.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x6e6f_6973));
            ood::gaussian_noise_like(&mean, &var, n_noise, &mut rng)?
        }
        "dataset" => {
            let ds_cfg = cfg
                .ood
                .dataset
                .as_ref()
                .ok_or_else(|| Error::validation("ood.dataset section missing"))?;
            let raw = load_dataset(ds_cfg)?;
            if raw.dim() != test.dim() {
                return Err(Error::validation(format!(
                    "ood dataset dim {} does not match model input dim {}",
                    raw.dim(),
                    test.dim()
                )));
            }
            if cfg.normalize {
                // The training split carries the statistics it was
                // standardized with; the out set must land in the same space.
                let stats = train
                    .normalization
                    .clone()
                    .expect("normalized splits carry their statistics");
                raw.normalized(&stats)?.features().clone()
            } else {
                raw.features().clone()
            }
        }
        other => {
            return Err(Error::validation(format!(
                "ood.source must be \"gaussian\" or \"dataset\", got {other:?}"
            )))
        }
    };

    let (predictor, fit) =
        resolve_predictor(cfg.ood.predictor, model, &val, cfg.ood.mc_passes, seed)?;
    let report = ood_report_files(cfg, model, &test, &out_features, &predictor, fit, outdir)?;
    Ok(report)
}

fn ood_report_files(
    cfg: &ExperimentConfig,
    model: &MlpModel,
    test: &Dataset,
    out_features: &Tensor,
    predictor: &Predictor,
    fit: Option<calibrate::TemperatureFit>,
    outdir: &Path,
) -> Result<OodReport> {
    let report = ood::ood_evaluate(
        model,
        test.features(),
        out_features,
        predictor,
        cfg.metrics.bins,
    )?;
    fs::write(outdir.join("ood_hist.csv"), report.histogram_csv())?;
    let mut summary = report.summary_string();
    summary.push_str(&format!("predictor = {}\n", cfg.ood.predictor.name()));
    if let Some(fit) = fit {
        summary.push_str(&format!("temperature = {}\n", fit.temperature));
        summary.push_str(&format!("val_nll = {}\n", fit.nll));
        summary.push_str(&format!("val_nll_at_identity = {}\n", fit.nll_at_identity));
    }
    fs::write(outdir.join("ood_summary.txt"), summary)?;
    Ok(report)
}

/// Perturbation sweeps for one or more named checkpoints under the
/// configured predictors. Every (model, predictor) pair sees identical
/// perturbed inputs: the direction stream restarts from the same seed.
pub fn run_perturb(
    cfg: &ExperimentConfig,
    models: &[(String, MlpModel)],
    seed: u64,
    outdir: &Path,
) -> Result<Vec<(String, PerturbationSweep)>> {
    if models.is_empty() {
        return Err(Error::usage("run_perturb needs at least one model"));
    }
    prepare_outdir(outdir)?;
    echo_config(cfg, outdir)?;
    let (_, val, test) = build_splits(cfg)?;

    let mut results = Vec::new();
    for (name, model) in models {
        for &which in &cfg.perturb.predictors {
            let (predictor, _) =
                resolve_predictor(which, model, &val, cfg.ood.mc_passes, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x7065_7274));
            let sweep = ood::perturbation_sweep(
                model,
                &predictor,
                &test,
                &cfg.perturb.mu_grid,
                cfg.perturb.directions_per_image,
                &mut rng,
            )?;
            let label = format!("{name}_{}", which.name());
            fs::write(outdir.join(format!("sweep_{label}.csv")), sweep.to_csv())?;
            results.push((label, sweep));
        }
    }
    Ok(results)
}

/// Label-entropy histogram export.
pub fn run_entropy_dist(
    cfg: &ExperimentConfig,
    seed: u64,
    outdir: &Path,
) -> Result<augment::EntropyHistogram> {
    prepare_outdir(outdir)?;
    echo_config(cfg, outdir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hist = augment::entropy_distribution(
        cfg.entropy.alpha,
        cfg.entropy.samples,
        cfg.entropy.collision_prob,
        cfg.entropy.bins,
        &mut rng,
    )?;
    fs::write(outdir.join("entropy_hist.csv"), hist.to_csv())?;
    let mut summary = String::new();
    summary.push_str(&format!("alpha = {}\n", cfg.entropy.alpha));
    summary.push_str(&format!("samples = {}\n", hist.n_samples));
    summary.push_str(&format!("collision_prob = {}\n", cfg.entropy.collision_prob));
    summary.push_str(&format!("mean = {}\n", hist.mean));
    summary.push_str(&format!("variance = {}\n", hist.variance));
    fs::write(outdir.join("entropy_summary.txt"), summary)?;
    Ok(hist)
}
