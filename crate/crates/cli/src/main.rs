use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

/// Facial-expression template matching with local-statistics features and
/// the Min-Max similarity classifier.
#[derive(Debug, Parser)]
#[command(name = "minmax-match", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize an image and compute its feature map; writes debug PGMs and
    /// the feature vector as CSV.
    Preprocess {
        /// Input PGM or grayscale PNG.
        input: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Classify one image against a gallery directory.
    Classify {
        /// Image to classify.
        input: PathBuf,
        /// Gallery directory of JAFFE-named images.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, default_value = "minmax", value_parser = ["minmax", "nn"])]
        classifier: String,
        /// Number of best matches to print.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Run the repeated hold-out evaluation on a dataset directory.
    Evaluate {
        #[command(flatten)]
        eval: EvalArgs,
        /// Output directory for report.csv, confusion.csv and coverage.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a range of window sizes and write sweep.csv.
    Sweep {
        #[command(flatten)]
        eval: EvalArgs,
        /// `fix-n` keeps --norm-window and varies M; `vary-both` sets N = M.
        #[arg(long, default_value = "fix-n", value_parser = ["fix-n", "vary-both"])]
        mode: String,
        /// Comma-separated odd window sizes in 3..=21.
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13,15,17,19,21")]
        sizes: Vec<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate a synthetic JAFFE-style dataset of PGM files.
    Synth {
        #[arg(long, default_value_t = 7)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        subjects: usize,
        #[arg(long, default_value_t = 3)]
        replicates: usize,
        /// Image height in pixels.
        #[arg(long, default_value_t = 48)]
        height: usize,
        /// Image width in pixels.
        #[arg(long, default_value_t = 48)]
        width: usize,
        /// Standard deviation of additive white noise.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Crop rectangle `T,L,H,W`, `auto` (JAFFE face crop for 256x256 frames) or `none`.
    #[arg(long, default_value = "auto")]
    crop: String,
    /// Normalization window N (odd, >= 3).
    #[arg(long = "norm-window", default_value_t = 11)]
    norm_window: usize,
    /// Feature-detection window M (odd, >= 3).
    #[arg(long = "feat-window", default_value_t = 11)]
    feat_window: usize,
    /// Min-Max similarity exponent.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory of JAFFE-named images.
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, default_value_t = 30)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "minmax", value_parser = ["minmax", "nn"])]
    classifier: String,
    #[arg(long, default_value = "paper", value_parser = ["paper", "per-sample"])]
    protocol: String,
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("MINMAX_MATCH_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("MINMAX_MATCH_THREADS must be an integer, got {raw:?}")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
