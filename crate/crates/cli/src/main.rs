//! `pamt` command-line tool.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure classes mapped to exit codes 1 (validation) and 2 (runtime).
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(anyhow::Error),
}

impl From<pamt::Error> for CliError {
    fn from(e: pamt::Error) -> Self {
        match e {
            pamt::Error::Invalid { .. } | pamt::Error::Json(_) => CliError::Validation(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

#[derive(Parser)]
#[command(name = "pamt", version, about = "Perceptually aligned music embeddings")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// JSON run configuration; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, where noted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory of `<clip_id>.pemb` embeddings used instead of encoding audio.
    #[arg(long, global = true)]
    embeddings_dir: Option<PathBuf>,
    /// Scores CSV replacing the synthetic judge.
    #[arg(long, global = true)]
    scores_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labeled toy corpus.
    Synth,
    /// Apply one perturbation to a WAV file.
    Perturb(commands::PerturbArgs),
    /// Encode WAV files into `.pemb` embedding sequences.
    Embed(commands::EmbedArgs),
    /// Train the conditioned projection head.
    Train(commands::TrainArgs),
    /// Correlate every metric with 2AFC scores.
    EvalMetrics(commands::EvalArgs),
    /// Fréchet distance between two sets of clips.
    Fad(commands::FadArgs),
    /// Attack a classifier on the test split and report constraints.
    Attack(commands::AttackArgs),
    /// Compare standard and adversarially trained classifiers.
    Defend(commands::DefendArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::RunConfig::load(cli.global.config.as_deref())?.with_seed(cli.global.seed);
    cfg.validate()?;
    let g = &cli.global;
    match cli.command {
        Command::Synth => commands::synth(&cfg, g),
        Command::Perturb(a) => commands::perturb(&cfg, g, a),
        Command::Embed(a) => commands::embed(&cfg, g, a),
        Command::Train(a) => commands::train(&cfg, g, a),
        Command::EvalMetrics(a) => commands::eval_metrics(&cfg, g, a),
        Command::Fad(a) => commands::fad(&cfg, g, a),
        Command::Attack(a) => commands::attack(&cfg, g, a),
        Command::Defend(a) => commands::defend(&cfg, g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
