use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hksync::config::{self, ExperimentConfig};
use hksync::enumerate::enumerate_law;
use hksync::error::Error;
use hksync::runner;

/// Noisy Hegselmann-Krause quasi-synchronization experiments.
#[derive(Parser)]
#[command(name = "hksync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, listing every problem found.
    Validate { config: PathBuf },
    /// Run an experiment and write samples.csv, survival.csv and summary.json.
    Run {
        config: PathBuf,
        /// Output directory, overriding [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show a built-in preset; with --emit-config print it as TOML.
    Preset {
        name: String,
        #[arg(long)]
        emit_config: bool,
    },
    /// Exact law of min(T, horizon) for a micro-instance with Rademacher noise.
    Enumerate { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) => 2,
        Error::Parse(_) => 3,
        Error::Config(_) => 4,
        Error::ResourceLimit(_) => 6,
        Error::InvalidState(_) | Error::Runtime(_) | Error::Insufficient(_) | Error::Io(_) => 5,
    }
}

fn run(cli: Cli) -> hksync::error::Result<()> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = config::load_config(&config)?;
            println!("ok {} fingerprint={}", config.display(), cfg.fingerprint()?);
        }
        Command::Run { config, out } => {
            let cfg = config::load_config(&config)?;
            let out = runner::run_experiment(&cfg, out.as_deref())?;
            println!("{}", out.line());
        }
        Command::Preset { name, emit_config } => {
            let cfgs = config::preset(&name)?;
            for (k, cfg) in cfgs.iter().enumerate() {
                if emit_config {
                    if k > 0 {
                        println!("# ---");
                    }
                    print!("{}", cfg.to_toml()?);
                } else {
                    describe(cfg)?;
                }
            }
        }
        Command::Enumerate { config } => {
            let cfg = config::load_config(&config)?;
            let model = cfg
                .model()
                .ok_or_else(|| Error::Usage("enumerate needs an hk config".into()))?;
            let law = enumerate_law(&model, cfg.ensemble.horizon)?;
            println!("t,p_hit,survival");
            for (t, p) in law.pmf.iter().enumerate() {
                println!("{t},{p},{}", law.survival(t as u64));
            }
            println!("# P(T > {}) = {}", law.horizon, law.tail);
            println!("# E min(T, {}) = {}", law.horizon, law.censored_mean());
        }
    }
    Ok(())
}

fn describe(cfg: &ExperimentConfig) -> hksync::error::Result<()> {
    println!(
        "{} scenario={:?} runs={} horizon={} fingerprint={}",
        cfg.name.as_deref().unwrap_or("-"),
        cfg.scenario,
        cfg.ensemble.runs,
        cfg.ensemble.horizon,
        cfg.fingerprint()?
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hksync: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
