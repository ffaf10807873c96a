//! `tsan` binary: command-line front end of the detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tsan_core::cli::{self, commands, CommandContext};

#[derive(Parser)]
#[command(
    name = "tsan",
    version = cli::version(),
    about = "Temporal-spatial attention network for DoS detection"
)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory (default: the config's output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the random seed of every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labeled traffic at the configured data paths.
    SynthData {
        /// Training records to generate.
        #[arg(long, default_value_t = 2000)]
        train_records: usize,
        /// Test records to generate.
        #[arg(long, default_value_t = 1000)]
        test_records: usize,
    },
    /// Parse, encode, split, and window the raw record files.
    Preprocess,
    /// Pretrain both encoders on the training windows.
    Pretrain,
    /// Train a detection model on the preprocessed windows.
    Train {
        /// Start from encoder weights in this checkpoint.
        #[arg(long, value_name = "CKPT")]
        from_pretrained: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a windowed dataset.
    Evaluate {
        /// Checkpoint to score (default: <out>/model.ckpt).
        model: Option<PathBuf>,
        /// Dataset to score it on (default: <out>/test.windows).
        data: Option<PathBuf>,
        /// Decision threshold (default: the checkpoint's own).
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train and score ablation variants.
    Ablate {
        /// One variant name; all six run when omitted.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score raw records or a windowed dataset with a checkpoint.
    Predict {
        /// Checkpoint to score with.
        model: PathBuf,
        /// Raw record file or dataset container.
        input: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck,
}

fn run(cli: Cli) -> tsan_core::Result<()> {
    let ctx = CommandContext::new(cli.config.as_deref(), cli.out, cli.seed)?;
    match cli.command {
        Command::SynthData {
            train_records,
            test_records,
        } => commands::synth_data(&ctx, train_records, test_records),
        Command::Preprocess => commands::preprocess(&ctx),
        Command::Pretrain => commands::pretrain(&ctx),
        Command::Train { from_pretrained } => commands::train(&ctx, from_pretrained.as_deref()),
        Command::Evaluate {
            model,
            data,
            threshold,
        } => commands::evaluate(&ctx, model, data, threshold),
        Command::Ablate { variant } => commands::ablate(&ctx, variant.as_deref()),
        Command::Predict { model, input } => commands::predict(&ctx, &model, &input),
        Command::Gradcheck => commands::gradcheck(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
