//! `aiml`: config-driven runner for the augmentation-invariant manifold
//! learning experiments.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | configuration or command-line error |
//! | 3 | parse error in an input file |
//! | 4 | numerical failure |
//! | 5 | encoder training diverged |
//! | 6 | I/O error, including missing input files |
//! | 7 | domain error |
//! | 8 | data error |

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aiml::Error;
use clap::{Parser, Subcommand};

use crate::config::Config;

#[derive(Parser)]
#[command(name = "aiml", version, about = "Augmentation-invariant manifold learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Configuration file (`key = value` lines with `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; `section.key=value` targets another section.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a multi-view dataset from a synthetic manifold.
    Generate(Common),
    /// Spectral embedding of a saved dataset.
    Embed(Common),
    /// kNN comparison of representations over a size or frequency sweep.
    KnnEval(Common),
    /// Train the triplet-objective encoder on a saved dataset.
    TrainEncoder(Common),
    /// kNN comparison on MNIST with augmented views.
    MnistEval(Common),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. } => 3,
        Error::Numerical(_) => 4,
        Error::Training { .. } => 5,
        Error::Io(_) => 6,
        Error::Domain(_) => 7,
        Error::Data(_) => 8,
    }
}

fn load(common: &Common, section: &str) -> aiml::Result<config::Section> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    for o in &common.overrides {
        cfg.set(o, section)?;
    }
    Ok(cfg.section(section))
}

fn run(cli: Cli) -> aiml::Result<()> {
    match cli.command {
        Command::Generate(c) => commands::generate(load(&c, "generate")?),
        Command::Embed(c) => commands::embed(load(&c, "embed")?),
        Command::KnnEval(c) => commands::knn_eval(load(&c, "knn-eval")?),
        Command::TrainEncoder(c) => commands::train_encoder(load(&c, "train-encoder")?),
        Command::MnistEval(c) => commands::mnist_eval(load(&c, "mnist-eval")?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
