mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tritrain::trinet::Branch;

use crate::config::Config;
use crate::error::Result;

const CONFIG_KEYS: &str = "\
Config keys (TOML sections; any key can also be given as --set section.key=value):
  seed                        single seed for data, init, batching and sampling
  output_dir                  where manifest.toml, metrics.csv, checkpoint.json, report.json go
  [data]   kind               synthetic | csv | sparse
           generator          two_moons | gaussian_blobs (synthetic)
           n_source, n_target, rotation_deg, translation, noise_sigma (synthetic)
           source_path, target_path, test_path   files for csv/sparse data
           dim                feature count for sparse files
           val_count          labeled target rows moved to a validation split
           standardize        z-score features using source statistics
  [model]  input_dim, f_hidden, branch_hidden, activation (relu | sigmoid), use_bn,
           bn_eps, bn_momentum, dropout_labeling, dropout_target, num_classes,
           lambda             weight of the F1/F2 weight-divergence penalty
           gates.from_f1_f2, gates.from_ft   which branches update F
  [train]  steps_k, iter_per_phase, pretrain_iters, batch_labeling, batch_target, lr,
           optimizer.kind (momentum_sgd | adagrad), optimizer.momentum, optimizer.eps,
           lr_decay.after_step, lr_decay.lr
  [labeling] threshold, n_init, cap, steps_divisor
  [analysis] a_distance, heldout_fraction, repeats, iters, lr, l2
  [bound]  instances, max_samples (<= 50), max_hypotheses (<= 200)

Exit codes: 0 success, 1 runtime error, 2 usage, 3 config, 4 I/O, 5 verification failure.";

#[derive(Debug, Parser)]
#[command(name = "tritrain", version, about = "Pseudo-labeling tri-training for domain adaptation", after_help = CONFIG_KEYS)]
struct Cli {
    /// Print per-step progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file; defaults apply to every missing key.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Override any config key, e.g. --set model.lambda=0.001 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(d) = &self.output_dir {
            overrides.push(format!("output_dir={}", toml::Value::String(d.display().to_string())));
        }
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair as CSV files.
    GenData(Common),
    /// Pretrain, then run the adaptation steps; writes metrics and a checkpoint.
    Train(Common),
    /// Accuracy of a checkpoint's branches on the configured evaluation data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// checkpoint.json written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// f1, f2 or ft; all three when omitted.
        #[arg(long)]
        branch: Option<Branch>,
    },
    /// 𝒜-distance between source and target, on raw inputs and on F features.
    Adist {
        #[command(flatten)]
        common: Common,
        /// checkpoint.json written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Exhaustively verify the generalization bounds on small random instances.
    BoundCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => commands::gen_data(&c.load()?),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Eval {
            common,
            checkpoint,
            branch,
        } => commands::eval(&common.load()?, &checkpoint, branch),
        Command::Adist { common, checkpoint } => commands::adist(&common.load()?, &checkpoint),
        Command::BoundCheck { common, inject_fault } => commands::bound_check(&common.load()?, inject_fault),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
