use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::{Format, RunConfig, SimulationFile};
use super::CliError;
use crate::simulation::{Estimator, Scenario};

#[derive(Debug, Parser)]
#[command(name = "tsbma", version, about = "Two-stage Bayesian model averaging for instrumental-variable regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model-averaged two-stage estimator to a CSV dataset.
    Fit(FitArgs),
    /// Run the Monte Carlo study.
    Simulate(SimulateArgs),
}

/// Flags given here override the corresponding keys of the config file.
#[derive(Debug, Args)]
pub struct FitArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Comma-separated subset of text, json, csv.
    #[arg(long, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
    #[arg(long)]
    pub occam_ratio: Option<f64>,
    #[arg(long)]
    pub conventional_sargan_df: bool,
}

impl FitArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(d) = &self.data {
            config.data_path = d.clone();
        } else if config.data_path.is_relative() {
            // Relative data paths are relative to the config file.
            if let Some(parent) = self.config.parent() {
                config.data_path = parent.join(&config.data_path);
            }
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(d) = &self.output_dir {
            config.output.directory = d.clone();
        }
        if let Some(f) = &self.format {
            config.output.formats = f.clone();
        }
        if let Some(r) = self.occam_ratio {
            config.search.occam_ratio = r;
        }
        if self.conventional_sargan_df {
            config.diagnostics.conventional_sargan_df = true;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML simulation configuration; built-in defaults when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Master seed; required so every study is reproducible.
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: Option<Scenario>,
    /// Comma-separated subset of 2sbma, 2sls, ols.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<Estimator>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s.to_ascii_lowercase().as_str() {
        "valid" => Ok(Scenario::Valid),
        "invalid" => Ok(Scenario::Invalid),
        other => Err(format!("unknown scenario `{other}` (expected valid or invalid)")),
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulationFile, CliError> {
        let mut file = match &self.config {
            Some(path) => SimulationFile::load(path)?,
            None => SimulationFile::default(),
        };
        let sim = &mut file.simulation;
        sim.seed = self.seed;
        if let Some(r) = self.replications {
            sim.replications = r;
        }
        if let Some(n) = self.n {
            sim.n = n;
        }
        if let Some(s) = self.scenario {
            sim.scenario = s;
        }
        if let Some(e) = &self.estimators {
            sim.estimators = e.clone();
        }
        if let Some(d) = &self.output_dir {
            file.output.directory = d.clone();
        }
        sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(file)
    }
}
