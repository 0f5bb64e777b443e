//! Experiment runner. Each subcommand loads a TOML config of the matching
//! kind, applies any command-line overrides, and writes artifacts under the
//! output directory. Exit codes: 0 success, 1 runtime failure, 2 config
//! rejected.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use adarch::config::{parse_seed_list, ExperimentConfig, ExperimentKind};
use adarch::error::Error;
use adarch::experiments::run_experiment;

#[derive(Parser)]
#[command(
    name = "adarch",
    version,
    about = "Variational training of neural networks with learned layer sizes and depth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment TOML config
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the config's seed list (comma separated, e.g. 1,2,3)
    #[arg(long, value_name = "LIST")]
    seeds: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the active width of a single hidden layer on periodic toy data
    ToySize(CommonArgs),
    /// Learn network depth through layer-bypass gates on periodic toy data
    ToyDepth(CommonArgs),
    /// Compare rigid and size/depth-adaptive networks on regression tables
    Uci(CommonArgs),
    /// Mushroom contextual bandit with Thompson-sampling agents
    Bandit {
        #[command(flatten)]
        common: CommonArgs,
        /// Run the config's full-scale interaction count instead of the
        /// desk-scale default
        #[arg(long)]
        full_scale: bool,
    },
}

fn load(common: &CommonArgs, expected: ExperimentKind) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if cfg.kind() != expected {
        return Err(Error::Config {
            issues: vec![format!(
                "config {} has kind '{}' but the '{}' subcommand was invoked",
                common.config.display(),
                cfg.kind().as_str(),
                expected.as_str()
            )],
        });
    }
    if let Some(out) = &common.out {
        cfg.set_out_dir(out.clone());
    }
    if let Some(seeds) = &common.seeds {
        cfg.set_seeds(parse_seed_list(seeds)?)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    let (cfg, full_scale) = match &cli.command {
        Command::ToySize(c) => (load(c, ExperimentKind::ToySize)?, false),
        Command::ToyDepth(c) => (load(c, ExperimentKind::ToyDepth)?, false),
        Command::Uci(c) => (load(c, ExperimentKind::Uci)?, false),
        Command::Bandit { common, full_scale } => (load(common, ExperimentKind::Bandit)?, *full_scale),
    };
    eprintln!(
        "[adarch] {} -> {} (config {})",
        cfg.kind().as_str(),
        cfg.out_dir().display(),
        &cfg.hash()?[..12]
    );
    run_experiment(&cfg, full_scale)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config { .. } | Error::TomlParse(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
