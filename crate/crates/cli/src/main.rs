use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Nanyin symbolic music pipeline.
#[derive(Debug, Parser)]
#[command(name = "nanyin", version, about)]
struct Cli {
    /// Seed for every random choice; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file (must contain `version = 1`).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Debug logging.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode the principal track of a MIDI file as NanyinTok tokens.
    Tokenize(TokenizeArgs),
    /// Convert the principal track of a MIDI file to a rule-injected graph.
    Graph(GraphArgs),
    /// Fit the pitch model and the nianzhi detector; writes a checkpoint
    /// directory.
    Train(TrainArgs),
    /// Decode a four-part ensemble from a one-track skeleton.
    Generate(GenerateArgs),
    /// Score a generated file against a reference.
    Eval(EvalArgs),
    /// Print the resolved config as TOML.
    Config,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    /// MIDI file.
    input: PathBuf,
    /// Mode name; defaults to the config's `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Write JSON instead of one token per line.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct GraphArgs {
    /// MIDI file.
    input: PathBuf,
    /// Mode name; defaults to the config's `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Serialized graph output.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training MIDI files.
    inputs: Vec<PathBuf>,
    /// Train on this many synthetic pieces when no inputs are given.
    #[arg(long, default_value_t = 20)]
    synthetic: usize,
    /// Mode name; defaults to the config's `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Checkpoint directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Style {
    Standard,
    Light,
    Melodic,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// MIDI skeleton; its principal track is used.
    #[arg(long)]
    skeleton: PathBuf,
    /// Directory written by `train`; an untrained model is used otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Mode name; defaults to the config's `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// Output MIDI file.
    #[arg(short, long, default_value = "ensemble.mid")]
    out: PathBuf,
    /// Ornament family for every part.
    #[arg(long, value_enum)]
    ornament_style: Option<Style>,
    /// Seed C♯/F♯ special notes on the pipa part.
    #[arg(long)]
    special_notes: bool,
    /// JSON generation report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Generated MIDI file.
    #[arg(long)]
    pred: PathBuf,
    /// Reference MIDI file.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Mode name; defaults to the config's `mode`.
    #[arg(long)]
    mode: Option<String>,
    /// JSON output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
