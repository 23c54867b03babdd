//! `afford`: generate, curate, train, and evaluate pose-centered affordance
//! datasets and models from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config failure.

mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afford", version, about = "Pose-centered affordance pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    Gen {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract affordance labels from records with curation intermediates.
    Curate {
        /// Dataset directory to curate in place.
        #[arg(long)]
        dataset: PathBuf,
        /// Optional run configuration (TOML) for curation knobs.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the conditional noise predictor.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Training dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Output parameter file; the loss curve lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the training seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample affordances per scene and score them against ground truth.
    Eval {
        /// Trained parameter file.
        #[arg(long)]
        model: PathBuf,
        /// Evaluation dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Report path (JSON); a text table goes to stdout and `<out>.txt`.
        #[arg(long)]
        out: PathBuf,
        /// Optional run configuration (TOML) for eval knobs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score the ground truth against itself instead of sampling the
        /// model; exercises the metric harness.
        #[arg(long)]
        oracle: bool,
        /// Write a saliency overlay image of the first record.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Write per-sample metric rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Overrides the eval seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Command failure carrying its exit code class.
pub enum CmdError {
    /// Bad invocation, config, or input data layout: exit 2.
    Usage(String),
    /// Failure while doing the work: exit 1.
    Runtime(String),
}

impl CmdError {
    fn report(&self) -> ExitCode {
        match self {
            CmdError::Usage(m) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
            CmdError::Runtime(m) => {
                eprintln!("error: {m}");
                ExitCode::from(1)
            }
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("AFFORD_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out, seed } => commands::gen(&config, &out, seed),
        Command::Curate { dataset, config } => commands::curate(&dataset, config.as_deref()),
        Command::Train { config, dataset, out, seed } => {
            commands::train(&config, &dataset, &out, seed)
        }
        Command::Eval { model, dataset, out, config, oracle, overlay, csv, seed } => {
            commands::eval(&model, &dataset, &out, config.as_deref(), oracle, overlay.as_deref(), csv.as_deref(), seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
