//! `mcse`: simulate scenes, enhance recordings, evaluate CI-SDR, self-test.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "mcse", version, about = "Multichannel mask-based speech enhancement")]
struct Cli {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// One-based microphone numbers, e.g. `1,7,4`.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenes: mixture, early image, clean speech and scene file.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// circular7, rectangular6 or random.
        #[arg(long)]
        array: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        /// Seconds per scene.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Beamform multichannel recordings.
    Enhance {
        #[command(flatten)]
        common: Common,
        /// A mixture WAV or a directory of `*_mixture.wav` files.
        #[arg(long)]
        input: PathBuf,
        /// Early-image WAV for oracle masks on a single input file.
        #[arg(long)]
        early: Option<PathBuf>,
        /// `oracle` or `net:PATH`.
        #[arg(long)]
        mask: Option<String>,
        /// Post-mask floor in dB; omitted means no post-masking.
        #[arg(long, allow_hyphen_values = true)]
        gmin_db: Option<f64>,
        /// `auto` or a zero-based index into the selected channels.
        #[arg(long = "ref")]
        reference: Option<String>,
    },
    /// CI-SDR of the closest microphone and of the enhanced output.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Simulation directory, or comma-separated early-image WAVs.
        #[arg(long)]
        refs: String,
        /// Enhancement directory, or comma-separated enhanced WAVs.
        #[arg(long)]
        estimates: String,
    },
    /// Reduced-size invariant checks of every module.
    Selftest {
        #[command(flatten)]
        common: Common,
        /// Weight file to check against the configured network.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let job = match &cli.config {
        Some(p) => match config::JobConfig::load(p) {
            Ok(j) => j,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => config::JobConfig::default(),
    };
    let result = match cli.command {
        Command::Simulate {
            common,
            array,
            count,
            duration,
        } => commands::simulate(&job, &common, array, count, duration),
        Command::Enhance {
            common,
            input,
            early,
            mask,
            gmin_db,
            reference,
        } => commands::enhance(&job, &common, &input, early.as_deref(), mask, gmin_db, reference),
        Command::Evaluate {
            common,
            refs,
            estimates,
        } => commands::evaluate(&job, &common, &refs, &estimates),
        Command::Selftest { common, weights } => commands::selftest(&job, &common, weights.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
