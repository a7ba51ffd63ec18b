//! Command-line pipeline: dataset generation, victim training, attack
//! campaigns, defense sweeps, transfer matrices, and report aggregation.
//!
//! Every command reads one JSON config file; `--set key=value` overrides
//! individual keys (dotted paths reach nested sections). All randomness
//! is seeded from the config, so reruns reproduce outputs byte for byte.
//! The only environment override is `POINTCA_OUT_DIR`, which re-roots
//! relative output paths.

mod commands;

use clap::{Args, Parser, Subcommand};
use pointca::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pointca", version, about = "Adversarial attacks on point-cloud completion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file for this command.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set attack.eta=2.5`. The value is
    /// parsed as JSON when possible, else taken as a string. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and the attack-pair manifest.
    #[command(after_help = commands::GEN_DATA_HELP)]
    GenData(ConfigArgs),
    /// Train the victim completion model.
    #[command(after_help = commands::TRAIN_HELP)]
    Train(ConfigArgs),
    /// Train the shape classifier used for semantic evaluation and the
    /// classification-noise baseline.
    #[command(after_help = commands::TRAIN_CLASSIFIER_HELP)]
    TrainClassifier(ConfigArgs),
    /// Run (or resume) an attack campaign over the pair manifest.
    #[command(after_help = commands::ATTACK_HELP)]
    Attack {
        #[command(flatten)]
        config: ConfigArgs,
        /// Worker threads for pair-level parallelism; overrides the
        /// config. Results are identical for any worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Sweep the three defenses over a campaign's adversarial clouds.
    #[command(after_help = commands::DEFEND_HELP)]
    Defend(ConfigArgs),
    /// Aggregate campaign CSVs into a JSON summary and relative-ASR
    /// curves.
    #[command(after_help = commands::REPORT_HELP)]
    Report(ConfigArgs),
    /// Evaluate adversarial clouds crafted on one victim against others.
    #[command(after_help = commands::TRANSFER_HELP)]
    Transfer(ConfigArgs),
}

/// Exit codes: 0 success, 2 config error, 3 data error, 4 runtime error.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::InvalidParam(_) | Error::InvalidSpec(_) => 2,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::VersionMismatch(_)
        | Error::EmptyDataset
        | Error::TooFewClasses(_)
        | Error::EmptyCloud
        | Error::TooFewPoints { .. }
        | Error::InvalidViewpoint => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(&args.config, &args.set),
        Command::Train(args) => commands::train(&args.config, &args.set),
        Command::TrainClassifier(args) => commands::train_classifier(&args.config, &args.set),
        Command::Attack { config, workers } => commands::attack(&config.config, &config.set, workers),
        Command::Defend(args) => commands::defend(&args.config, &args.set),
        Command::Report(args) => commands::report(&args.config, &args.set),
        Command::Transfer(args) => commands::transfer(&args.config, &args.set),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
