mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Outcome;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "miscat", version, about = "Multiscale scanning tests for inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reference scale (n = 512, 10000 replications).
    #[arg(long, global = true)]
    full: bool,
    /// key=value overrides applied after the file.
    #[arg(global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Phantom, convolved phantom, noisy data and variance as PGRID files.
    GenData,
    /// Monte-Carlo quantile table of the reference statistic.
    Quantiles,
    /// Scan data; exit 0 with rejections, 10 without.
    Scan,
    /// Empirical FWER under pure noise per scenario.
    LevelStudy,
    /// Empirical and predicted power for block signals.
    PowerStudy,
    /// Largest detectable noise level per scale and probe preset.
    DetectionBoundary,
    /// FWHM and kurtosis of the kernel.
    Fwhm,
}

fn run(cli: &Cli) -> miscat::Result<Outcome> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| miscat::MiscatError::InvalidParameter(e.to_string()))?;
    }
    if cli.full {
        eprintln!("warning: --full runs at n = 512 with 10000 replications; expect tens of minutes");
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.full)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Quantiles => commands::quantiles(&cfg),
        Command::Scan => commands::scan(&cfg),
        Command::LevelStudy => commands::level(&cfg),
        Command::PowerStudy => commands::power(&cfg),
        Command::DetectionBoundary => commands::boundary(&cfg),
        Command::Fwhm => commands::fwhm_report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Rejections(0)) => ExitCode::from(10),
        Ok(Outcome::Rejections(_)) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
