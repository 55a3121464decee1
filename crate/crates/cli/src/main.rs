mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flashback::training::TrainMode;

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "flashback",
    version,
    about = "Storyline-guided story generation with temporal prompts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TwoStage,
    E2e,
    Rl,
}

impl From<Mode> for TrainMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::TwoStage => TrainMode::TwoStage,
            Mode::E2e => TrainMode::E2e,
            Mode::Rl => TrainMode::Rl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract events, annotate relations, write the corpus and vocabulary.
    Preprocess(Common),
    /// Pretrain the storyline model on unannotated text.
    Pretrain(Common),
    /// Train the storyline and story models.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training regime; overrides `train.mode`.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Generate stories for the test split.
    Generate(Common),
    /// Score generations with the automatic metrics.
    Evaluate(Common),
    /// Regress human interest ratings on story properties.
    Analyze(Common),
    /// Score relation predictions against CaTeRS gold labels.
    Benchmark(Common),
    /// Fine-tune with RL over a grid of mixture settings.
    Sweep(Common),
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), &common.overrides)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Preprocess(c) => commands::preprocess(&load(&c)?),
        Command::Pretrain(c) => commands::pretrain(&load(&c)?),
        Command::Train { common, mode } => {
            let mut cfg = load(&common)?;
            if let Some(mode) = mode {
                cfg.train.mode = mode.into();
            }
            commands::train_cmd(&cfg)
        }
        Command::Generate(c) => commands::generate(&load(&c)?),
        Command::Evaluate(c) => commands::evaluate_cmd(&load(&c)?),
        Command::Analyze(c) => commands::analyze(&load(&c)?),
        Command::Benchmark(c) => commands::benchmark(&load(&c)?),
        Command::Sweep(c) => commands::sweep(&load(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
