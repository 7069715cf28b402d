use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use drml_iv::commands::{error_record, run, write_error_record, DEFAULT_OUT_DIR};
use drml_iv::config::{Overrides, RunConfig, Subcommand};
use drml_iv::error::{DrmlError, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Unadjusted, TSLS and DRML estimates of the LATE.
    Estimate,
    /// Conditional LATE over effect modifiers with bootstrap bands.
    Clate,
    /// Principal-strata shares and covariate profiles.
    Profile,
    /// Surface and zero frontier of the defier sensitivity mapping.
    Sensitivity,
    /// Simulation study comparing TSLS and DRML.
    Simulate,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Estimate => Subcommand::Estimate,
            Command::Clate => Subcommand::Clate,
            Command::Profile => Subcommand::Profile,
            Command::Sensitivity => Subcommand::Sensitivity,
            Command::Simulate => Subcommand::Simulate,
        }
    }
}

/// Doubly robust instrumental-variable estimation.
#[derive(Debug, Parser)]
#[command(name = "drml-iv", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
}

fn execute(cli: &Cli, cfg: &mut RunConfig) -> Result<Vec<PathBuf>> {
    if let Some(path) = &cli.config {
        *cfg = RunConfig::from_toml_file(path)?;
    }
    cfg.apply(&Overrides {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.clone(),
        alpha: cli.alpha,
    });
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(DrmlError::Config("threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| DrmlError::Config(e.to_string()))?;
    }
    run(cli.command.into(), cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = RunConfig::default();
    match execute(&cli, &mut cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = error_record(Some(cli.command.into()), &e);
            eprintln!("{record}");
            let dir = cli
                .out
                .clone()
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
            write_error_record(&dir, &record);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
