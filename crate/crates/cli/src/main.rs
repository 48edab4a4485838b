//! `deformsdf` command-line entry point.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, CommandFactory, FromArgMatches, Parser, Subcommand};
use deformsdf::config::{schema_fields, Config};
use deformsdf::Error;

const VERSION: &str = env!("DEFORMSDF_VERSION");

/// Deformable-object SDF pipeline: data generation, training, inference,
/// reconstruction and evaluation.
#[derive(Parser, Debug)]
#[command(name = "deformsdf", version = VERSION)]
struct Cli {
    /// JSON config file; omitted fields keep their defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one config field, e.g. `--set train.epochs=50`. Values parse
    /// as JSON and fall back to plain strings.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,

    /// Output root; every configured path is resolved against it.
    #[arg(long, env = "DEFORMSDF_OUT", default_value = ".", global = true)]
    out: PathBuf,

    /// More log output (repeat for debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate the training and held-out datasets.
    GenData,
    /// Fit the object module and object codes to the nominal shapes.
    Pretrain,
    /// Train the deformation module and force encoder.
    Train,
    /// Recover a force code from a partial view of a deformed tool.
    Infer,
    /// Extract a mesh of a nominal or deformed tool.
    Recon,
    /// Reconstruct along a straight line between two force codes.
    Interp,
    /// Export field values on a cutting plane.
    Xsection,
    /// Track surface points between two deformations.
    Correspond,
    /// Score reconstructions and SDF errors on every split.
    Eval,
    /// Print the resolved config.
    ShowConfig,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Recon => "recon",
            Command::Interp => "interp",
            Command::Xsection => "xsection",
            Command::Correspond => "correspond",
            Command::Eval => "eval",
            Command::ShowConfig => "show-config",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => 2,
        Error::Numerical(_) | Error::EmptySurface => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let schema = format!("Config fields (dotted path = default):\n  {}", schema_fields().join("\n  "));
    let matches = Cli::command().after_long_help(schema).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cfg = match Config::load(cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    match commands::run(cli.command, &cfg, &cli.out, VERSION) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
