//! `rnan`: degrade, train, run and score restoration networks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnan::degrade::BayerPattern;

#[derive(Debug, Parser)]
#[command(name = "rnan", version, about = "Residual non-local attention networks for image restoration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for training and for degradation.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Gaussian noise level on the 0–255 scale (selects AWGN).
    #[arg(long, global = true)]
    pub sigma: Option<f64>,

    /// JPEG quality 1–100 (selects JPEG).
    #[arg(long, global = true)]
    pub quality: Option<u8>,

    /// Super-resolution factor 2–4 (selects bicubic SR).
    #[arg(long, global = true)]
    pub scale: Option<u32>,

    /// Bayer layout, e.g. RGGB (selects mosaicing).
    #[arg(long, global = true)]
    pub pattern: Option<BayerPattern>,

    /// Average predictions over the 8 flips and rotations.
    #[arg(long, global = true)]
    pub self_ensemble: bool,

    /// Score the luma channel of RGB results.
    #[arg(long, global = true)]
    pub y_channel: bool,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Input image or directory.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,

    /// Model checkpoint to load.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    /// Training iterations, overriding the config.
    #[arg(long, global = true)]
    pub iters: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write degraded copies of every image in --input to --out.
    Degrade,
    /// Train a network on the images in --input (or paths.corpus).
    Train,
    /// Restore an image or a directory of images with --checkpoint.
    Infer,
    /// Degrade, restore and score a directory; prints a CSV table.
    Eval,
    /// Run the finite-difference gradient suite.
    Gradcheck,
    /// Print the parameter count of the configured network.
    Params,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("rnan: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    // Clap groups do not see global flags given after the subcommand.
    let chosen = [cli.sigma.is_some(), cli.quality.is_some(), cli.scale.is_some(), cli.pattern.is_some()];
    if chosen.iter().filter(|&&c| c).count() > 1 {
        eprintln!("rnan: --sigma, --quality, --scale and --pattern are mutually exclusive");
        return ExitCode::from(2);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = format!("{e:#}");
            eprintln!("rnan: {}", text.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::FAILURE
        }
    }
}
