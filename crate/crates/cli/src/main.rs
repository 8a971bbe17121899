use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hpqsm_cli::commands::{
    cmd_eval, cmd_metrics, cmd_phantom, cmd_report, cmd_sweep_fc, cmd_sweep_voxel, cmd_train,
    EvalMode,
};
use hpqsm_cli::{CliError, ExperimentConfig};

/// Susceptibility mapping from high-pass filtered phase: phantom data
/// generation, network training, physics-based test-time fine-tuning,
/// evaluation and robustness sweeps.
#[derive(Parser)]
#[command(name = "hpqsm", version, about)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the dataset seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for case-parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset and manifest.
    Phantom,
    /// Pre-train the progressive network (and the single-stage baseline).
    Train,
    /// Evaluate stored test cases with pretrained or fine-tuned weights.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
    },
    /// Robustness sweep over high-pass filter cutoffs.
    SweepFc,
    /// Robustness sweep over in-plane voxel sizes (k-space resampling).
    SweepVoxel,
    /// Recompute metrics from stored volumes.
    Metrics {
        /// Estimated volume (QVOL).
        #[arg(long)]
        estimate: PathBuf,
        /// Reference volume (QVOL).
        #[arg(long)]
        reference: PathBuf,
        /// Optional ROI label volume (QVOL, integral values).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Merge metrics CSVs into a combined report.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config PATH is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::validation(format!("--jobs: {e}")))?;
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Phantom => cmd_phantom(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval { mode } => cmd_eval(&cfg, *mode),
        Command::SweepFc => cmd_sweep_fc(&cfg),
        Command::SweepVoxel => cmd_sweep_voxel(&cfg),
        Command::Metrics { estimate, reference, labels } => {
            cmd_metrics(&cfg, estimate, reference, labels.as_deref())
        }
        Command::Report => cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
