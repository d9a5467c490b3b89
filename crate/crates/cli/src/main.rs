//! `mixlab`: config-driven experiment runner.
//!
//! Subcommands map onto the experiment runners: `train`, `evaluate`,
//! `sweep-alpha`, `ood`, `perturb`, and `entropy-dist`. Every run echoes its
//! resolved config into the output directory and writes plot-ready CSVs;
//! populated output directories are never overwritten.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 I/O or format error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixlab_core::experiment::{self, ExperimentConfig};
use mixlab_core::Error;

const DEFAULTS_HELP: &str = "\
Config defaults (TOML; see configs/ for templates):
  [split]      train/val/test 0.6/0.2/0.2, seed 0
  normalize    true (per-feature standardization with training statistics)
  [model]      dropout 0.0
  [train]      batch_size 128, learning_rate 0.1, momentum 0.9 (nesterov),
               weight_decay 5e-4, schedule [[60,2.0],[120,2.0],[160,2.0]],
               eval_checkpoint \"best\" (highest validation accuracy)
  [mix]        kind \"none\", alpha 0.0, per_sample_lambda false,
               eligible_layers all (manifold)
  [smoothing]  kind \"none\", epsilon 0.1, kappa 0.1
  [metrics]    bins 15
  [ood]        source \"gaussian\", predictor \"plain\", mc_passes 10,
               noise_n = test-set size
  [perturb]    mu_grid [0, 0.01, 0.1, 1, 10, 100], directions_per_image 1,
               predictors [\"plain\", \"temperature\"]
  [entropy]    alpha 1.0, samples 1000000, collision_prob 0.0, bins 30
  [sweep]      alphas [0, 0.1, 0.2, 0.3, 0.4, 1.0]
  seeds        [0]
  temperature fitting searches [0.05, 10] by 0.01 grid plus refinement";

#[derive(Parser)]
#[command(
    name = "mixlab",
    version,
    about = "Train small classifiers with mixup and related label smoothing, and measure calibration, predictive uncertainty, and out-of-distribution behavior",
    after_long_help = DEFAULTS_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (must be empty or absent).
    #[arg(long)]
    out: PathBuf,
    /// Override the config's seed list (repeatable).
    #[arg(long)]
    seed: Vec<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed; writes epoch series, calibration report,
    /// and best/final checkpoints per seed.
    Train(CommonArgs),
    /// Evaluate a saved model on the config's test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint (JSON) produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Optional directory for report files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate across the config's alpha grid, aggregating over
    /// seeds.
    SweepAlpha(CommonArgs),
    /// Out-of-distribution evaluation of a saved model (Gaussian noise or a
    /// configured dataset) under the configured predictor.
    Ood {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for noise generation and MC-dropout (default: first config seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Perturbation sweeps over growing radii for one or more checkpoints.
    Perturb {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint (repeatable; compared on identical perturbations).
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export the mixed-label entropy histogram for the configured alpha.
    EntropyDist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Usage(_) | Error::Dimension(_) | Error::Numeric(_) => 1,
        Error::Format(_) | Error::Io(_) => 2,
    }
}

fn load_config(path: &std::path::Path, seed_override: &[u64]) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if !seed_override.is_empty() {
        cfg.seeds = seed_override.to_vec();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args.config, &args.seed)?;
            fs::create_dir_all(&args.out)?;
            for &seed in &cfg.seeds {
                let dir = args.out.join(format!("seed_{seed}"));
                let outcome = experiment::run_train(&cfg, seed, &dir)?;
                let r = &outcome.run.report;
                println!(
                    "seed {seed}: best epoch {} | test acc {:.4} ece {:.4} oe {:.5} nll {:.4} -> {}",
                    outcome.run.best_epoch,
                    r.accuracy,
                    r.ece,
                    r.oe,
                    r.nll,
                    dir.display()
                );
            }
            Ok(())
        }
        Command::Evaluate { config, model, out } => {
            let cfg = load_config(&config, &[])?;
            let model = experiment::load_model(&model)?;
            let report = experiment::run_evaluate(&cfg, &model, out.as_deref())?;
            print!("{}", report.to_report_string());
            Ok(())
        }
        Command::SweepAlpha(args) => {
            let cfg = load_config(&args.config, &args.seed)?;
            let alphas = cfg.sweep.alphas.clone();
            let (_, aggregates) = experiment::run_alpha_sweep(&cfg, &alphas, &args.out)?;
            for a in &aggregates {
                println!(
                    "alpha {:>5}: acc {:.4} (+-{:.4}) ece {:.4} (+-{:.4}) oe {:.5} (+-{:.5})",
                    a.alpha,
                    a.accuracy_mean,
                    a.accuracy_std,
                    a.ece_mean,
                    a.ece_std,
                    a.oe_mean,
                    a.oe_std
                );
            }
            Ok(())
        }
        Command::Ood {
            config,
            model,
            out,
            seed,
        } => {
            let cfg = load_config(&config, &[])?;
            let model = experiment::load_model(&model)?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let report = experiment::run_ood(&cfg, &model, seed, &out)?;
            println!(
                "auroc {:.4} | mean entropy in {:.4} out {:.4} -> {}",
                report.auroc,
                report.mean_entropy_in,
                report.mean_entropy_out,
                out.display()
            );
            Ok(())
        }
        Command::Perturb {
            config,
            model,
            out,
            seed,
        } => {
            let cfg = load_config(&config, &[])?;
            if model.is_empty() {
                return Err(Error::usage("perturb needs at least one --model"));
            }
            let mut models = Vec::new();
            for (i, path) in model.iter().enumerate() {
                let loaded = experiment::load_model(path)?;
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("model{i}"));
                let name = if models.iter().any(|(n, _)| *n == stem) {
                    format!("{stem}_{i}")
                } else {
                    stem
                };
                models.push((name, loaded));
            }
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let sweeps = experiment::run_perturb(&cfg, &models, seed, &out)?;
            for (label, sweep) in &sweeps {
                let last = sweep.accuracy.len() - 1;
                println!(
                    "{label}: accuracy {:.4} -> {:.4} over mu {:?}",
                    sweep.accuracy[0], sweep.accuracy[last], sweep.mu_grid
                );
            }
            Ok(())
        }
        Command::EntropyDist { config, out, seed } => {
            let cfg = load_config(&config, &[])?;
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let hist = experiment::run_entropy_dist(&cfg, seed, &out)?;
            println!(
                "alpha {} over {} draws: mean entropy {:.4}, variance {:.5} -> {}",
                cfg.entropy.alpha,
                hist.n_samples,
                hist.mean,
                hist.variance,
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
