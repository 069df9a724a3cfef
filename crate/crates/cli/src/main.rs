mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use config::{PipelineConfig, TimeFormatName};

/// Detect, identify and localize radiological sources in gamma-ray event streams.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Pipeline config file (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// How the `time` column of run files is encoded.
    #[arg(long, global = true, value_enum)]
    time_format: Option<TimeFormatArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeFormatArg {
    Seconds,
    DeltaUs,
}

#[derive(Subcommand)]
enum Command {
    /// Write the built-in synthetic spectrum library to the spectra directory.
    SynthSpectra,
    /// Simulate a labeled dataset of null and single-source runs.
    Simulate,
    /// Build source pmfs, the null pmf and the log-ratio tables.
    BuildTables,
    /// Estimate null score moments from source-free runs.
    Calibrate,
    /// Score every run in the runs directory.
    Score {
        /// Also write the per-(variant, bandwidth) Z grid.
        #[arg(long)]
        z_grid: bool,
    },
    /// Compute detection, identification and localization metrics.
    Evaluate {
        /// Threshold for the confusion and localization files; repeatable.
        #[arg(long, allow_negative_numbers = true)]
        phi: Vec<f64>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    if let Some(t) = cli.time_format {
        config.time_format = match t {
            TimeFormatArg::Seconds => TimeFormatName::Seconds,
            TimeFormatArg::DeltaUs => TimeFormatName::DeltaUs,
        };
    }
    if let Command::Evaluate { phi } = &cli.command {
        if !phi.is_empty() {
            config.evaluate.phi = phi.clone();
        }
    }
    config.validate()?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;
    pool.install(|| match cli.command {
        Command::SynthSpectra => commands::synth_spectra(&config),
        Command::Simulate => commands::simulate(&config),
        Command::BuildTables => commands::build_tables(&config),
        Command::Calibrate => commands::calibrate(&config),
        Command::Score { z_grid } => commands::score(&config, z_grid),
        Command::Evaluate { .. } => commands::evaluate(&config),
    })
}
