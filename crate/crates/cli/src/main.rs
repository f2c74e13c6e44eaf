//! `aevit`: generate ADR data, train, roll out, evaluate, run ablation
//! sweeps and inspect checkpoints.

mod ablate;
mod commands;
mod overrides;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use aevit_core::CoreError;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aevit", version, about = "Parameter-conditioned AE-ViT surrogate for parametric PDEs")]
struct Cli {
    /// Directory that holds one subdirectory per run, named by config hash.
    #[arg(long, env = "AEVIT_RUN_ROOT", default_value = "runs", global = true)]
    run_root: PathBuf,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Start from the desk-scale preset instead of the defaults.
    #[arg(long)]
    desk: bool,

    /// Override one key, e.g. `--set trainer.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the ADR benchmark and write train/valid/test containers.
    GenerateData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a model; resumes from the run directory's checkpoint if present.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ignore an existing checkpoint.
        #[arg(long)]
        fresh: bool,
        /// Evaluate on the test split afterwards.
        #[arg(long)]
        evaluate: bool,
    },
    /// Roll a checkpoint out on a dataset file and write errors and figures.
    Rollout {
        /// Checkpoint file; its best parameters are used.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset container, e.g. `test.bin` from generate-data.
        #[arg(long)]
        data: PathBuf,
        /// Steps to roll out from each simulation's initial state.
        #[arg(long)]
        horizon: usize,
        /// Comma-separated simulation indices; all if omitted.
        #[arg(long, value_delimiter = ',')]
        sims: Vec<usize>,
        /// Report directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a trained run on its test split against persistence.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train and evaluate every on/off combination of some toggles for several seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Toggles to vary: film_autoencoder, film_layernorm, param_token, film_qkv, coords.
        #[arg(long, value_delimiter = ',', required = true)]
        toggles: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Concurrent training processes.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// List the runs without starting them.
        #[arg(long)]
        dry_run: bool,
    },
    /// Print a checkpoint's manifest.
    InspectCheckpoint {
        path: PathBuf,
        /// Print the full manifest as JSON.
        #[arg(long)]
        json: bool,
    },
}

/// 2 configuration, 3 numerical failure, 4 I/O.
pub fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) | CoreError::Invalid(_) => 2,
        CoreError::NonFiniteLoss { .. } | CoreError::NonFinite(_) | CoreError::SolverDiverged { .. } => 3,
        CoreError::Io { .. } | CoreError::Format { .. } => 4,
        CoreError::Tensor(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_secs()
        .init();
    let root = cli.run_root;
    let result = match cli.command {
        Command::GenerateData { config, out } => commands::generate_data(&config, &out),
        Command::Train { config, fresh, evaluate } => commands::train(&root, &config, fresh, evaluate),
        Command::Rollout {
            checkpoint,
            data,
            horizon,
            sims,
            out,
        } => commands::rollout(&checkpoint, &data, horizon, &sims, &out),
        Command::Evaluate { config } => commands::evaluate(&root, &config),
        Command::Ablate {
            config,
            toggles,
            seeds,
            workers,
            dry_run,
        } => ablate::ablate(&root, &config, &toggles, &seeds, workers, dry_run),
        Command::InspectCheckpoint { path, json } => commands::inspect(&path, json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
