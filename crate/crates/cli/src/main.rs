mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::manifest::RunDir;

/// Diffusion sampling, guidance and FID experiments driven by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "echolab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<run_id>).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Sample from the configured denoiser into samples.dbds.
    Generate,
    /// FID between the real set and a generated set.
    Fid,
    /// FID between two random halves of the real set.
    OptimalFid,
    /// Repeated FID while varying the real subsample or the generation seed.
    FidVariance,
    /// FID for each entry of sampler.step_list.
    SweepNfe,
    /// Train a neural denoiser with per-epoch checkpoints.
    TrainDenoiser,
    /// Train a real-vs-generated discriminator and select an epoch.
    TrainDiscriminator,
    /// Shift-classifier study on pre- and post-guidance samples.
    TrainClassifier,
    /// Join result records of finished runs.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Fid => "fid",
            Command::OptimalFid => "optimal-fid",
            Command::FidVariance => "fid-variance",
            Command::SweepNfe => "sweep-nfe",
            Command::TrainDenoiser => "train-denoiser",
            Command::TrainDiscriminator => "train-discriminator",
            Command::TrainClassifier => "train-classifier",
            Command::Report => "report",
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config_path = cli
        .config
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut cfg = Config::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let out = cli.output.unwrap_or_else(|| PathBuf::from("runs").join(&cfg.run_id));
    let mut dir = RunDir::open(out)?;
    let start = Instant::now();
    let results = match cli.command {
        Command::Generate => commands::generate(&cfg, &mut dir),
        Command::Fid => commands::fid(&cfg, &mut dir),
        Command::OptimalFid => commands::optimal(&cfg, &mut dir),
        Command::FidVariance => commands::fid_variance(&cfg, &mut dir),
        Command::SweepNfe => commands::sweep(&cfg, &mut dir),
        Command::TrainDenoiser => commands::train_denoiser_cmd(&cfg, &mut dir),
        Command::TrainDiscriminator => commands::train_discriminator_cmd(&cfg, &mut dir),
        Command::TrainClassifier => commands::train_classifier(&cfg, &mut dir),
        Command::Report => commands::report(&cfg, &mut dir),
    }?;
    let resolved = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let manifest = dir.finish(
        cli.command.name(),
        &cfg.run_id,
        resolved,
        results,
        start.elapsed().as_secs_f64(),
    )?;
    eprintln!("manifest {}", manifest.digest.unwrap_or_default());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echolab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
