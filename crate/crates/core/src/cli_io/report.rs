use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::simulation_hash;
use crate::engine::{TwoStageResult, VariableSummary};
use crate::simulation::{first_stage_labels, second_stage_labels, ReplicateRecord, SimConfig, SimMetrics};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub dropped_rows: usize,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64, dropped_rows: usize) -> Self {
        Self { version: VERSION.to_string(), config_hash, seed, dropped_rows }
    }
}

/// Everything a `fit` run emits. The JSON form holds every statistic at full
/// precision; the text form rounds the same values to four decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: Provenance,
    pub result: TwoStageResult,
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

fn fixed_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), fixed)
}

fn opt_full(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

const TABLE_HEADER: [&str; 6] = ["Variable", "P(incl)", "Cond. mean", "Cond. sd", "Mean", "SD"];

fn table(out: &mut String, rows: &[VariableSummary], with_evidence: bool) {
    let width = rows.iter().map(|v| v.label.len()).chain([TABLE_HEADER[0].len()]).max().unwrap_or(8);
    let _ = write!(out, "{:<width$}", TABLE_HEADER[0]);
    for h in &TABLE_HEADER[1..] {
        let _ = write!(out, "  {h:>11}");
    }
    if with_evidence {
        let _ = write!(out, "  Evidence");
    }
    out.push('\n');
    for v in rows {
        let _ = write!(
            out,
            "{:<width$}  {:>11}  {:>11}  {:>11}  {:>11}  {:>11}",
            v.label,
            fixed(v.inclusion_probability),
            fixed_opt(v.conditional_mean),
            fixed_opt(v.conditional_sd),
            fixed(v.unconditional_mean),
            fixed(v.unconditional_sd),
        );
        if with_evidence {
            let _ = write!(out, "  {}", v.evidence);
        }
        out.push('\n');
    }
}

impl FitReport {
    pub fn to_text(&self) -> String {
        let r = &self.result;
        let p = &self.provenance;
        let mut out = String::new();
        let _ = writeln!(out, "Two-stage Bayesian model averaging");
        let _ = writeln!(out, "version {}  config {}  seed {}", p.version, p.config_hash, p.seed);
        let _ = writeln!(out, "observations {}  dropped rows {}", r.n, p.dropped_rows);

        for stage in &r.first_stage {
            let _ = writeln!(out, "\nFirst stage results: {}", stage.response);
            table(&mut out, &stage.variables, false);
            let _ = writeln!(
                out,
                "Best model BIC {}  R-squared {}  retained models {}",
                fixed(stage.best_bic),
                fixed(stage.best_r_squared),
                stage.retained_models
            );
        }

        let _ = writeln!(out, "\nSecond stage results");
        table(&mut out, &r.variables, true);
        let _ = writeln!(out, "Intercept {}", fixed(r.intercept));
        let inv = &r.inventory;
        let _ = writeln!(
            out,
            "Best model BIC {}  generalized R-squared {}  combinations {}  model pairs {}",
            fixed(inv.best_bic),
            fixed(inv.best_generalized_r_squared),
            inv.combos,
            inv.pairs
        );

        if let Some(d) = &r.diagnostics {
            let _ = writeln!(out, "\nDiagnostics (p-values)");
            let _ = writeln!(out, "Bayesian Sargan          {}", fixed_opt(d.bayesian_sargan));
            let _ = writeln!(out, "Classical Sargan         {}", fixed_opt(d.classical_sargan));
            let _ = writeln!(out, "Bayesian Cragg-Donald    {}", fixed(d.bayesian_cragg_donald));
            let _ = writeln!(out, "Classical Cragg-Donald   {}", fixed(d.classical_cragg_donald));
            let _ = writeln!(out, "Generalized R-squared    {}", fixed(inv.best_generalized_r_squared));
            if d.undefined_sargan > 0 {
                let _ = writeln!(out, "Sargan undefined for {} model pairs (excluded)", d.undefined_sargan);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Long format: `section,response,variable,quantity,value`, full precision.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |section: &str, response: &str, variable: &str, quantity: &str, value: String| {
            w.write_record([section, response, variable, quantity, value.as_str()]).expect("in-memory write");
        };
        row("section", "response", "variable", "quantity", "value".into());
        let p = &self.provenance;
        row("provenance", "", "", "version", p.version.clone());
        row("provenance", "", "", "config_hash", p.config_hash.clone());
        row("provenance", "", "", "seed", p.seed.to_string());
        row("provenance", "", "", "dropped_rows", p.dropped_rows.to_string());
        row("provenance", "", "", "observations", self.result.n.to_string());

        let variables = |section: &str, response: &str, vars: &[VariableSummary], row: &mut dyn FnMut(&str, &str, &str, &str, String)| {
            for v in vars {
                row(section, response, &v.label, "inclusion_probability", v.inclusion_probability.to_string());
                row(section, response, &v.label, "conditional_mean", opt_full(v.conditional_mean));
                row(section, response, &v.label, "conditional_sd", opt_full(v.conditional_sd));
                row(section, response, &v.label, "unconditional_mean", v.unconditional_mean.to_string());
                row(section, response, &v.label, "unconditional_sd", v.unconditional_sd.to_string());
                row(section, response, &v.label, "evidence", v.evidence.to_string());
            }
        };
        let r = &self.result;
        for stage in &r.first_stage {
            variables("first_stage", &stage.response, &stage.variables, &mut row);
            row("first_stage", &stage.response, "", "best_bic", stage.best_bic.to_string());
            row("first_stage", &stage.response, "", "best_r_squared", stage.best_r_squared.to_string());
            row("first_stage", &stage.response, "", "retained_models", stage.retained_models.to_string());
        }
        let outcome = "outcome";
        variables("second_stage", outcome, &r.variables, &mut row);
        row("second_stage", outcome, "", "intercept", r.intercept.to_string());
        row("second_stage", outcome, "", "best_bic", r.inventory.best_bic.to_string());
        row("second_stage", outcome, "", "best_generalized_r_squared", r.inventory.best_generalized_r_squared.to_string());
        if let Some(d) = &r.diagnostics {
            row("diagnostics", "", "", "bayesian_sargan", opt_full(d.bayesian_sargan));
            row("diagnostics", "", "", "classical_sargan", opt_full(d.classical_sargan));
            row("diagnostics", "", "", "bayesian_cragg_donald", d.bayesian_cragg_donald.to_string());
            row("diagnostics", "", "", "classical_cragg_donald", d.classical_cragg_donald.to_string());
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}

/// Output of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub provenance: Provenance,
    pub config: SimConfig,
    pub metrics: SimMetrics,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl SimulationReport {
    pub fn new(config: SimConfig, metrics: SimMetrics, records: Vec<ReplicateRecord>) -> Self {
        let provenance = Provenance::new(simulation_hash(&config), config.seed, 0);
        Self { provenance, config, metrics, records }
    }

    pub fn metrics_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Simulation: scenario {:?}, n {}, {} replications ({} failed), seed {}",
            self.config.scenario, self.config.n, m.replications, m.failures, self.config.seed
        );
        let _ = writeln!(out, "{:<8}  {:>11}  {:>11}", "Method", "Bias(W)", "MSE");
        for e in &m.estimators {
            let _ = writeln!(out, "{:<8}  {:>11}  {:>11}", e.estimator.as_str(), fixed(e.mean_bias_of_beta_w), fixed(e.mse_full_beta));
        }
        let _ = writeln!(out, "Rejection rates at alpha {}", self.config.alpha);
        let _ = writeln!(out, "Sargan         Bayesian {}  classical {}", fixed_opt(m.sargan.bayesian_rejection_rate), fixed_opt(m.sargan.classical_rejection_rate));
        let _ = writeln!(
            out,
            "Cragg-Donald   Bayesian {}  classical {}",
            fixed_opt(m.cragg_donald.bayesian_rejection_rate),
            fixed_opt(m.cragg_donald.classical_rejection_rate)
        );
        out
    }

    /// One row per replicate; absent values are empty cells.
    pub fn replicates_csv(&self) -> String {
        let first = first_stage_labels();
        let second = second_stage_labels();
        let mut header = vec!["replicate".to_string(), "error".to_string()];
        for e in &self.config.estimators {
            header.push(format!("{}_beta_w", e.as_str()));
            header.push(format!("{}_squared_error", e.as_str()));
        }
        for h in ["bayesian_sargan", "classical_sargan", "bayesian_cragg_donald", "classical_cragg_donald"] {
            header.push(h.to_string());
        }
        header.extend(first.iter().map(|l| format!("first_{l}")));
        header.extend(second.iter().map(|l| format!("second_{l}")));

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&header).expect("in-memory write");
        for r in &self.records {
            let mut row = vec![r.replicate.to_string(), r.error.clone().unwrap_or_default()];
            for e in &self.config.estimators {
                let est = r.estimate(*e);
                row.push(opt_full(est.map(|x| x.beta_w)));
                row.push(opt_full(est.map(|x| x.squared_error)));
            }
            for v in [r.bayesian_sargan, r.classical_sargan, r.bayesian_cragg_donald, r.classical_cragg_donald] {
                row.push(opt_full(v));
            }
            let pad = |values: &[f64], len: usize| -> Vec<String> {
                (0..len).map(|k| values.get(k).map_or_else(String::new, |v| v.to_string())).collect()
            };
            row.extend(pad(&r.first_stage_inclusion, first.len()));
            row.extend(pad(&r.second_stage_inclusion, second.len()));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
    }
}
