use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vsmfuse::config::PipelineConfig;
use vsmfuse::pipeline::{Command, RunOptions, Workspace};

#[derive(Debug, Parser)]
#[command(name = "vsmfuse", version, about = "Phonotactic/acoustic VSM fusion for dialect identification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Explicit artifact path; matched to stage inputs by file name.
    #[arg(long = "stage-input", global = true)]
    stage_input: Vec<PathBuf>,
    /// Ignore a stale output lock and config-hash mismatches.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Generate a synthetic two-view corpus.
    SynthData,
    /// Select the n-gram vocabulary from training phone strings.
    BuildVocab,
    /// Fit the SVD projector and write X_P for both splits.
    FeaturizePhono,
    /// Train the diagonal GMM-UBM on training frames.
    TrainUbm,
    /// Train the total-variability matrix.
    TrainTv,
    /// Extract i-vectors and write X_A for both splits.
    ExtractIvectors,
    /// Fit CCA on X_P and X_A and write Z_C.
    FitCca,
    /// Fit LDA and WCCN on Z_C and X_A and write the A, B and A+B spaces.
    FitLdaWccn,
    /// Train one softmax classifier per feature space.
    TrainClf,
    /// Score all systems and write report.txt, results.json and predictions.json.
    Evaluate,
    /// Run every stage from build-vocab through evaluate.
    RunPipeline,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::SynthData => Command::SynthData,
            Cmd::BuildVocab => Command::BuildVocab,
            Cmd::FeaturizePhono => Command::FeaturizePhono,
            Cmd::TrainUbm => Command::TrainUbm,
            Cmd::TrainTv => Command::TrainTv,
            Cmd::ExtractIvectors => Command::ExtractIvectors,
            Cmd::FitCca => Command::FitCca,
            Cmd::FitLdaWccn => Command::FitLdaWccn,
            Cmd::TrainClf => Command::TrainClf,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::RunPipeline => Command::RunPipeline,
        }
    }
}

fn run(cli: Cli) -> vsmfuse::Result<()> {
    let path = cli
        .config
        .ok_or_else(|| vsmfuse::Error::Config { key: "--config".into(), msg: "a configuration file is required".into() })?;
    let mut cfg = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = cli.out {
        // command-line paths are relative to the working directory
        cfg.run.out_dir = std::env::current_dir().map(|d| d.join(&out)).unwrap_or(out);
    }
    let ws = Workspace::open(
        cfg,
        &RunOptions {
            stage_inputs: cli.stage_input,
            force: cli.force,
        },
    )?;
    ws.run(cli.command.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
