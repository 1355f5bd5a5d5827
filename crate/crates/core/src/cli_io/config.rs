use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::diagnostics::DiagnosticsOptions;
use crate::engine::{EngineOptions, SpaceRule};
use crate::model_space::SearchOptions;
use crate::simulation::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected text, json or csv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { directory: PathBuf::from("tsbma-out"), formats: vec![Format::Text, Format::Json, Format::Csv] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Roles {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
}

impl Roles {
    /// Every role column in declaration order: outcome, W, X, Z.
    pub fn all(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.outcome)
            .chain(&self.endogenous)
            .chain(&self.covariates)
            .chain(&self.instruments)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.outcome.is_empty() {
            return Err(CliError::Config("roles.outcome must name exactly one column".into()));
        }
        if self.endogenous.is_empty() {
            return Err(CliError::Config("roles.endogenous must name at least one column".into()));
        }
        let all: Vec<&String> = self.all().collect();
        for (i, c) in all.iter().enumerate() {
            if all[..i].contains(c) {
                return Err(CliError::Config(format!("column `{c}` is assigned to more than one role")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageRules {
    pub first: SpaceRule,
    pub second: SpaceRule,
}

/// Configuration of a `fit` run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_path: PathBuf,
    pub seed: u64,
    pub roles: Roles,
    pub search: SearchOptions,
    pub stages: StageRules,
    pub diagnostics: DiagnosticsOptions,
    pub output: OutputOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.data_path.as_os_str().is_empty() {
            return Err(CliError::Config("data_path is required".into()));
        }
        self.roles.validate()?;
        self.search.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.output.formats.is_empty() {
            return Err(CliError::Config("output.formats must not be empty".into()));
        }
        Ok(())
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            search: self.search,
            first_stage: self.stages.first,
            second_stage: self.stages.second,
            diagnostics: self.diagnostics,
        }
    }

    /// SHA-256 of the fields that change the results; output settings excluded.
    pub fn hash(&self) -> String {
        let semantic = serde_json::json!({
            "data_path": self.data_path,
            "seed": self.seed,
            "roles": self.roles,
            "search": self.search,
            "stages": self.stages,
            "diagnostics": self.diagnostics,
        });
        digest(&semantic)
    }
}

/// Configuration file of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationFile {
    pub simulation: SimConfig,
    pub output: OutputOptions,
}

impl SimulationFile {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

pub fn simulation_hash(config: &SimConfig) -> String {
    digest(&serde_json::to_value(config).expect("configuration serializes"))
}

fn digest(value: &serde_json::Value) -> String {
    // serde_json maps are ordered by key, so the encoding is canonical.
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
