//! Command-line front end. See `esd-pinn --help`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esd_pinn::cli;
use esd_pinn::config::RunConfig;
use esd_pinn::Result;

#[derive(Parser)]
#[command(
    name = "esd-pinn",
    about = "Solve the energy supply-demand ODE system with a physics-informed \
             neural network and compare against an adaptive RK45 integrator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the system with RK45 and write the solution CSV.
    Integrate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the PINN; writes history, checkpoint and prediction CSV.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the network seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Compare two solution CSVs and write the report JSON.
    Evaluate {
        /// Reference solution CSV (numerical method).
        reference_csv: PathBuf,
        /// Candidate solution CSV (network prediction).
        candidate_csv: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Training checkpoint; adds an exact-tangent residual diagnostic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// integrate + train + evaluate in one go.
    FullRun {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the network seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Validate the configuration and exit without touching anything.
        #[arg(long)]
        dry_run: bool,
    },
}

/// Caps intra-epoch parallelism from ESD_PINN_THREADS (0 or unset = auto).
fn init_thread_pool() -> Result<()> {
    if let Ok(value) = std::env::var("ESD_PINN_THREADS") {
        let threads: usize = value.parse().map_err(|_| {
            esd_pinn::Error::Config(format!("ESD_PINN_THREADS must be an integer, got `{value}`"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| esd_pinn::Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(common: &CommonArgs, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = seed {
        config.network.seed = seed;
    }
    Ok(config)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    init_thread_pool()?;
    match cli.command {
        Command::Integrate { common } => {
            let config = load_config(&common, None)?;
            cli::cmd_integrate(&config)?;
        }
        Command::Train { common, seed, resume } => {
            let config = load_config(&common, seed)?;
            cli::cmd_train(&config, resume)?;
        }
        Command::Evaluate { reference_csv, candidate_csv, common, checkpoint } => {
            let config = load_config(&common, None)?;
            cli::cmd_evaluate(&config, &reference_csv, &candidate_csv, checkpoint.as_deref())?;
        }
        Command::FullRun { common, seed, dry_run } => {
            let config = load_config(&common, seed)?;
            if dry_run {
                println!("config ok: {}", config.config_hash());
                return Ok(());
            }
            cli::cmd_full_run(&config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
