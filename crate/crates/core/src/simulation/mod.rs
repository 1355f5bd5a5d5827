//! Monte Carlo study with fifteen covariates, ten candidate instruments and
//! one endogenous regressor, in a valid and an invalid-instrument scenario.
//!
//! Random streams are ChaCha20 keyed by the study seed, with the stream id
//! `(replicate << 8) | block` selecting an independent sequence per
//! replicate and variable block. Normals use the ziggurat sampler of
//! `rand_distr::StandardNormal`, drawn row by row within a block.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{classical_cragg_donald, classical_sargan, DiagnosticsOptions};
use crate::engine::{fit_two_stage, ols_full, two_stage_least_squares, Dataset, EngineOptions};
use crate::error::{Error, Result};
use crate::model_space::SearchOptions;
use crate::numerics::DesignMatrix;

pub const COVARIATES: usize = 15;
pub const INSTRUMENTS: usize = 10;
const BASE: usize = 10;
const CORRELATED: usize = 5;
const LOADINGS: [f64; 5] = [0.3, 0.5, 0.7, 0.9, 1.1];

const BLOCK_X: u64 = 0;
const BLOCK_X_NOISE: u64 = 1;
const BLOCK_Z: u64 = 2;
const BLOCK_Z_NOISE: u64 = 3;
const BLOCK_EPS: u64 = 4;
const BLOCK_XI: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Structural error independent of every instrument.
    #[default]
    Valid,
    /// Structural error loads on the first instrument.
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "2sbma")]
    TwoStageBma,
    #[serde(rename = "2sls")]
    TwoSlsFull,
    #[serde(rename = "ols")]
    OlsFull,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::TwoStageBma, Estimator::TwoSlsFull, Estimator::OlsFull];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::TwoStageBma => "2sbma",
            Estimator::TwoSlsFull => "2sls",
            Estimator::OlsFull => "ols",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidOptions(format!("unknown estimator `{s}` (expected 2sbma, 2sls or ols)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub replications: usize,
    pub scenario: Scenario,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub alpha: f64,
    pub search: SearchOptions,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            replications: 500,
            scenario: Scenario::Valid,
            seed: 0,
            estimators: Estimator::ALL.to_vec(),
            alpha: 0.05,
            search: SearchOptions::default(),
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidOptions(format!("n must be at least 50, got {}", self.n)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidOptions("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidOptions(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidOptions("estimators must not be empty".into()));
        }
        self.search.validate()
    }

    fn has(&self, e: Estimator) -> bool {
        self.estimators.contains(&e)
    }
}

/// True structural coefficients over `(W, X1..X15)`.
pub fn true_coefficients() -> DVector<f64> {
    let mut beta = DVector::zeros(1 + COVARIATES);
    beta[0] = 1.0;
    beta[1] = 1.8;
    beta[2] = 1.5;
    beta[11] = 1.0;
    beta[12] = -1.5;
    beta
}

fn stream(seed: u64, replicate: usize, block: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 8) | block);
    rng
}

fn normals(seed: u64, replicate: usize, block: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut rng = stream(seed, replicate, block);
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    m
}

/// Ten independent columns followed by five that load on the first five.
fn correlated_block(seed: u64, replicate: usize, base: u64, noise: u64, n: usize, independent: usize) -> DMatrix<f64> {
    let b = normals(seed, replicate, base, n, independent);
    let e = normals(seed, replicate, noise, n, CORRELATED);
    let mut m = DMatrix::zeros(n, independent + CORRELATED);
    m.columns_mut(0, independent).copy_from(&b);
    for c in 0..CORRELATED {
        let mut col = e.column(c).into_owned();
        for (k, l) in LOADINGS.iter().enumerate() {
            col.axpy(*l, &b.column(k), 1.0);
        }
        m.set_column(independent + c, &col);
    }
    m
}

fn labels(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|k| format!("{prefix}{k}")).collect()
}

/// Candidate order of the first-stage inclusion vector: `(Z1..Z10, X1..X15)`.
pub fn first_stage_labels() -> Vec<String> {
    labels("Z", INSTRUMENTS).into_iter().chain(labels("X", COVARIATES)).collect()
}

/// Regressor order of the second-stage inclusion vector: `(W, X1..X15)`.
pub fn second_stage_labels() -> Vec<String> {
    std::iter::once("W".to_string()).chain(labels("X", COVARIATES)).collect()
}

/// Generates the dataset for one replicate of size `n`.
pub fn generate_dataset(config: &SimConfig, replicate: usize) -> Dataset {
    generate(config.seed, replicate, config.n, config.scenario)
}

pub fn generate(seed: u64, replicate: usize, n: usize, scenario: Scenario) -> Dataset {
    let x = correlated_block(seed, replicate, BLOCK_X, BLOCK_X_NOISE, n, BASE);
    let z = correlated_block(seed, replicate, BLOCK_Z, BLOCK_Z_NOISE, n, CORRELATED);
    let eps = normals(seed, replicate, BLOCK_EPS, n, 1).column(0).into_owned();
    let xi = normals(seed, replicate, BLOCK_XI, n, 1).column(0).into_owned();

    let mut w = eps.clone() * 3.0;
    w.axpy(1.1, &x.column(0), 1.0);
    w.axpy(-0.5, &x.column(2), 1.0);
    w.axpy(0.75, &x.column(11), 1.0);
    w.axpy(0.75, &z.column(0), 1.0);
    w.axpy(-2.0, &z.column(7), 1.0);

    let mut eta = &eps + &xi;
    if scenario == Scenario::Invalid {
        eta += z.column(0);
    }
    let mut y = w.clone();
    y.axpy(1.8, &x.column(0), 1.0);
    y.axpy(1.5, &x.column(1), 1.0);
    y.axpy(1.0, &x.column(10), 1.0);
    y.axpy(-1.5, &x.column(11), 1.0);
    y.axpy(2.0, &eta, 1.0);

    let w = DesignMatrix::new(DMatrix::from_column_slice(n, 1, w.as_slice()), vec!["W".into()])
        .expect("generated values are finite");
    let x = DesignMatrix::new(x, labels("X", COVARIATES)).expect("generated values are finite");
    let z = DesignMatrix::new(z, labels("Z", INSTRUMENTS)).expect("generated values are finite");
    Dataset::new("Y", y, w, x, z).expect("generated roles are disjoint")
}

/// One estimator's outcome in a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub beta_w: f64,
    /// Mean squared error over the sixteen coefficients of `(W, X1..X15)`,
    /// excluded terms counted as zero.
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub error: Option<String>,
    pub estimates: Vec<(Estimator, EstimateRecord)>,
    pub bayesian_sargan: Option<f64>,
    pub classical_sargan: Option<f64>,
    pub bayesian_cragg_donald: Option<f64>,
    pub classical_cragg_donald: Option<f64>,
    /// First-stage inclusion over `(Z X)` for the endogenous regressor.
    pub first_stage_inclusion: Vec<f64>,
    /// Second-stage inclusion over `(W X)`.
    pub second_stage_inclusion: Vec<f64>,
}

impl ReplicateRecord {
    pub fn estimate(&self, e: Estimator) -> Option<&EstimateRecord> {
        self.estimates.iter().find(|(k, _)| *k == e).map(|(_, r)| r)
    }
}

fn record(estimate: &[f64]) -> EstimateRecord {
    let truth = true_coefficients();
    let squared_error =
        estimate.iter().zip(truth.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    EstimateRecord { beta_w: estimate[0], squared_error }
}

/// Fits every requested estimator on one replicate.
pub fn run_replicate(config: &SimConfig, replicate: usize) -> Result<ReplicateRecord> {
    let data = generate_dataset(config, replicate);
    let mut out = ReplicateRecord {
        replicate,
        error: None,
        estimates: Vec::new(),
        bayesian_sargan: None,
        classical_sargan: None,
        bayesian_cragg_donald: None,
        classical_cragg_donald: None,
        first_stage_inclusion: Vec::new(),
        second_stage_inclusion: Vec::new(),
    };
    for e in Estimator::ALL.into_iter().filter(|e| config.has(*e)) {
        let estimate = match e {
            Estimator::TwoStageBma => {
                let options = EngineOptions { search: config.search, diagnostics: config.diagnostics, ..Default::default() };
                let result = fit_two_stage(&data, &options)?;
                let d = result.diagnostics.as_ref().expect("fit_two_stage attaches diagnostics");
                out.bayesian_sargan = d.bayesian_sargan;
                out.bayesian_cragg_donald = Some(d.bayesian_cragg_donald);
                out.classical_sargan = d.classical_sargan;
                out.classical_cragg_donald = Some(d.classical_cragg_donald);
                out.first_stage_inclusion =
                    result.first_stage[0].variables.iter().map(|v| v.inclusion_probability).collect();
                out.second_stage_inclusion = result.variables.iter().map(|v| v.inclusion_probability).collect();
                result.point_estimate
            }
            Estimator::TwoSlsFull => two_stage_least_squares(&data)?.coefficients,
            Estimator::OlsFull => ols_full(&data)?.coefficients,
        };
        out.estimates.push((e, record(&estimate)));
    }
    if !config.has(Estimator::TwoStageBma) {
        out.classical_sargan = classical_sargan(&data, &config.diagnostics)?.p_value;
        out.classical_cragg_donald = Some(classical_cragg_donald(&data)?.p_value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: Estimator,
    /// Mean of `beta_W - 1`.
    pub mean_bias_of_beta_w: f64,
    /// Mean over replicates of the per-replicate coefficient-averaged
    /// squared error.
    pub mse_full_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRates {
    pub bayesian_rejection_rate: Option<f64>,
    pub classical_rejection_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionSummary {
    pub label: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub replications: usize,
    pub failures: usize,
    pub estimators: Vec<EstimatorMetrics>,
    pub sargan: RejectionRates,
    pub cragg_donald: RejectionRates,
    pub first_stage_inclusion: Vec<InclusionSummary>,
    pub second_stage_inclusion: Vec<InclusionSummary>,
}

impl SimMetrics {
    pub fn estimator(&self, e: Estimator) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|m| m.estimator == e)
    }

    pub fn first_stage(&self, label: &str) -> Option<&InclusionSummary> {
        self.first_stage_inclusion.iter().find(|s| s.label == label)
    }

    pub fn second_stage(&self, label: &str) -> Option<&InclusionSummary> {
        self.second_stage_inclusion.iter().find(|s| s.label == label)
    }
}

/// Linear-interpolation quantile on sorted data (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rate(values: impl Iterator<Item = Option<f64>>, alpha: f64) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    let mut any = false;
    for v in values {
        total += 1;
        if let Some(p) = v {
            any = true;
            if p < alpha {
                hits += 1;
            }
        }
    }
    (any && total > 0).then(|| hits as f64 / total as f64)
}

fn inclusion(records: &[&ReplicateRecord], labels: &[String], pick: fn(&ReplicateRecord) -> &[f64]) -> Vec<InclusionSummary> {
    if records.is_empty() || pick(records[0]).is_empty() {
        return Vec::new();
    }
    labels
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let mut v: Vec<f64> = records.iter().map(|r| pick(r)[k]).collect();
            v.sort_by(f64::total_cmp);
            InclusionSummary { label: label.clone(), median: quantile(&v, 0.5), q25: quantile(&v, 0.25), q75: quantile(&v, 0.75) }
        })
        .collect()
}

/// Aggregates replicate records; failed replicates only count as failures.
pub fn summarize(config: &SimConfig, records: &[ReplicateRecord]) -> SimMetrics {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let m = ok.len() as f64;
    let truth_w = true_coefficients()[0];
    let estimators = Estimator::ALL
        .into_iter()
        .filter(|e| config.has(*e) && !ok.is_empty())
        .map(|e| {
            let est: Vec<&EstimateRecord> = ok.iter().filter_map(|r| r.estimate(e)).collect();
            EstimatorMetrics {
                estimator: e,
                mean_bias_of_beta_w: est.iter().map(|r| r.beta_w - truth_w).sum::<f64>() / m,
                mse_full_beta: est.iter().map(|r| r.squared_error).sum::<f64>() / m,
            }
        })
        .collect();
    let (first_labels, second_labels) = (first_stage_labels(), second_stage_labels());
    SimMetrics {
        replications: records.len(),
        failures: records.len() - ok.len(),
        estimators,
        sargan: RejectionRates {
            bayesian_rejection_rate: rate(ok.iter().map(|r| r.bayesian_sargan), config.alpha),
            classical_rejection_rate: rate(ok.iter().map(|r| r.classical_sargan), config.alpha),
        },
        cragg_donald: RejectionRates {
            bayesian_rejection_rate: rate(ok.iter().map(|r| r.bayesian_cragg_donald), config.alpha),
            classical_rejection_rate: rate(ok.iter().map(|r| r.classical_cragg_donald), config.alpha),
        },
        first_stage_inclusion: inclusion(&ok, &first_labels, |r| &r.first_stage_inclusion),
        second_stage_inclusion: inclusion(&ok, &second_labels, |r| &r.second_stage_inclusion),
    }
}

/// Runs every replicate, in parallel, collecting records in replicate order.
pub fn run_records(config: &SimConfig) -> Result<Vec<ReplicateRecord>> {
    config.validate()?;
    Ok((0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_replicate(config, r).unwrap_or_else(|e| {
                log::warn!("replicate {r} failed: {e}");
                ReplicateRecord {
                    replicate: r,
                    error: Some(e.to_string()),
                    estimates: Vec::new(),
                    bayesian_sargan: None,
                    classical_sargan: None,
                    bayesian_cragg_donald: None,
                    classical_cragg_donald: None,
                    first_stage_inclusion: Vec::new(),
                    second_stage_inclusion: Vec::new(),
                }
            })
        })
        .collect())
}

pub fn run_study(config: &SimConfig) -> Result<SimMetrics> {
    let records = run_records(config)?;
    Ok(summarize(config, &records))
}

#[cfg(test)]
mod tests;
