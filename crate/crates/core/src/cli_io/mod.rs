//! Command-line entry points, dataset ingestion, run configuration and
//! report emission.

mod cli;
pub mod config;
pub mod data;
pub mod report;

use std::path::Path;

use thiserror::Error;

pub use cli::{Cli, Command, FitArgs, SimulateArgs};
pub use config::{Format, OutputOptions, Roles, RunConfig, SimulationFile, StageRules};
pub use data::{load_dataset, read_dataset, DataError, LoadedData};
pub use report::{FitReport, Provenance, SimulationReport};

use crate::engine::fit_two_stage;
use crate::simulation::{run_records, summarize, SimConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] crate::Error),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    /// Process exit status: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(args) => {
            let config = args.resolve()?;
            let report = command_fit(&config)?;
            if config.output.formats.contains(&Format::Text) {
                print!("{}", report.to_text());
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let file = args.resolve()?;
            let report = command_simulate(&file.simulation, &file.output)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

/// Fits the two-stage average described by `config` and writes the report
/// in every requested format.
pub fn command_fit(config: &RunConfig) -> Result<FitReport, CliError> {
    config.validate()?;
    let loaded = load_dataset(&config.data_path, &config.roles)?;
    log::info!(
        "loaded {} rows ({} dropped) from {}",
        loaded.dataset.n(),
        loaded.dropped_rows,
        config.data_path.display()
    );
    let result = fit_two_stage(&loaded.dataset, &config.engine_options())?;
    let report = FitReport {
        provenance: Provenance::new(config.hash(), config.seed, loaded.dropped_rows),
        result,
    };
    ensure_directory(&config.output.directory)?;
    for format in &config.output.formats {
        let (name, body) = match format {
            Format::Text => ("report.txt", report.to_text()),
            Format::Json => ("report.json", report.to_json()),
            Format::Csv => ("report.csv", report.to_csv()),
        };
        write_file(&config.output.directory.join(name), &body)?;
    }
    Ok(report)
}

/// Runs the simulation study and writes `metrics.json` and `replicates.csv`.
pub fn command_simulate(config: &SimConfig, output: &OutputOptions) -> Result<SimulationReport, CliError> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let records = run_records(config)?;
    let metrics = summarize(config, &records);
    let report = SimulationReport::new(config.clone(), metrics, records);
    ensure_directory(&output.directory)?;
    write_file(&output.directory.join("metrics.json"), &report.metrics_json())?;
    write_file(&output.directory.join("replicates.csv"), &report.replicates_csv())?;
    Ok(report)
}

fn ensure_directory(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Output { path: dir.display().to_string(), message: e.to_string() })
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    log::info!("writing {}", path.display());
    std::fs::write(path, body).map_err(|e| CliError::Output { path: path.display().to_string(), message: e.to_string() })
}
