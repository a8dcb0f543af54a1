//! `selfonn`: training, cross-validation, evaluation and analysis of
//! Self-ONN classifiers from a single JSON experiment file.

// `!(a < b)` is used on purpose so that NaN fails the gradient check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "selfonn", version, about = "Self-ONN experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set network.q=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for cross-validation.
    #[arg(long, default_value_t = 1, global = true)]
    jobs: usize,
    /// Seed for network initialization, shuffling and fold assignment.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network on the whole dataset.
    Train,
    /// Stratified k-fold cross-validation with several runs per fold.
    Crossval,
    /// Score a checkpoint on a labeled manifest or the configured dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `path,label` CSV; paths resolve against its directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Classify images with a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Parameter and MAC counts of the configured network.
    Analyze {
        /// Report every Q in {1, 3, 5, 7, 9}.
        #[arg(long)]
        sweep: bool,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Coordinates probed per parameter buffer; 0 probes all of them.
        #[arg(long, default_value_t = 6)]
        samples: usize,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Preprocess the dataset once into tensor files.
    Cache,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Engine(#[from] selfonn::Error),
    #[error("{0}")]
    Check(String),
}

fn load_config(common: &Common) -> selfonn::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command, common: Common) -> Result<(), Failure> {
    let cfg = load_config(&common)?;
    match command {
        Command::Train => {
            let s = commands::cmd_train(&cfg)?;
            println!(
                "epochs {} train_error {:.4} converged {} checkpoint {}",
                s.epochs,
                s.final_train_error,
                s.converged,
                s.checkpoint.display()
            );
        }
        Command::Crossval => {
            let r = commands::cmd_crossval(&cfg, common.jobs)?;
            let m = r.aggregate_metrics;
            println!(
                "folds {} trainings {} accuracy {} f1 {}",
                r.folds.len(),
                r.trainings,
                fmt(m.accuracy),
                fmt(m.f1)
            );
        }
        Command::Evaluate { checkpoint, manifest } => {
            let r = commands::cmd_evaluate(&cfg, &checkpoint, manifest.as_deref())?;
            let m = r.metrics.unwrap_or_default();
            println!("accuracy {} f1 {}", fmt(m.accuracy), fmt(m.f1));
        }
        Command::Predict { checkpoint, images } => {
            let rows = commands::cmd_predict(&checkpoint, &images)?;
            println!("path,class,score0,score1");
            for row in rows {
                println!("{},{},{},{}", row.path.display(), row.label.index(), row.scores[0], row.scores[1]);
            }
        }
        Command::Analyze { sweep } => {
            for r in commands::cmd_analyze(&cfg, sweep)? {
                let t = r.totals.expect("complexity totals");
                println!(
                    "{}: PARs {:.3}M MACs {:.2}M",
                    r.network,
                    t.pars as f64 / 1e6,
                    t.macs as f64 / 1e6
                );
            }
        }
        Command::Gradcheck { samples, corrupt_backward } => {
            let per_buffer = (samples > 0).then_some(samples);
            let r = commands::cmd_gradcheck(&cfg, per_buffer, corrupt_backward)?;
            let w = &r.worst;
            println!(
                "max_rel_error {:e} at {}[{}] analytic {:e} numeric {:e}",
                r.max_rel_error, w.buffer, w.coords, w.analytic, w.numeric
            );
            if !(r.max_rel_error < commands::GRADCHECK_TOLERANCE) {
                return Err(Failure::Check(format!(
                    "gradient check failed: {:e} >= {:e}",
                    r.max_rel_error,
                    commands::GRADCHECK_TOLERANCE
                )));
            }
        }
        Command::Cache => {
            let dir = commands::cmd_cache(&cfg)?;
            println!("cache {}", dir.display());
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command, cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Failure::Engine(e) if e.is_io_or_parse() => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
