use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use placeattr::evaluator::FeatureSource;
use placeattr_cli::{run, CliError, Command, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "placeattr", version, about = "Infer place attributes from visit sequences")]
struct Cli {
    /// Run config (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 = all cores. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Run directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a synthetic world with planted attributes.
    Simulate,
    /// Build the STEPS feature matrix.
    Featurize,
    /// Factorize the co-visitation matrix into place embeddings.
    Embed,
    /// Train one model per attribute on all labelled places.
    Train {
        #[arg(long, default_value = "steps")]
        source: FeatureSource,
    },
    /// Stratified cross-validated AUC per attribute.
    Evaluate {
        #[arg(long, default_value = "steps")]
        source: FeatureSource,
    },
    /// Cross-validated AUC of each STEPS feature group alone.
    Ablate,
    /// Top features, per-class distributions and coverage.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).machine_line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let config = base.resolve(&Overrides {
        seed: cli.seed,
        out: cli.out,
    })?;
    let (command, source) = match cli.command {
        Cmd::Simulate => (Command::Simulate, FeatureSource::Steps),
        Cmd::Featurize => (Command::Featurize, FeatureSource::Steps),
        Cmd::Embed => (Command::Embed, FeatureSource::Steps),
        Cmd::Train { source } => (Command::Train, source),
        Cmd::Evaluate { source } => (Command::Evaluate, source),
        Cmd::Ablate => (Command::Ablate, FeatureSource::Steps),
        Cmd::Report => (Command::Report, FeatureSource::Steps),
    };
    let manifest = run(command, &config, source, cli.workers)?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}
