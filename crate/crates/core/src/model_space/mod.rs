//! Subset search over candidate regressors with BIC scoring and Occam's
//! window.
//!
//! Every model carries an implicit intercept. Weights are proportional to
//! `exp(-BIC / 2)` under a uniform model prior.

mod search;

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{intercept_design, qr::ols_fit_matrix, DesignMatrix, LeastSquaresFit};

pub use search::{enumerate_subsets, Strategy, SubsetScores};

/// Hard limit imposed by the `u64` mask.
pub const MAX_CANDIDATES: usize = 64;

/// Which regression stage a model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    First,
    Second,
}

/// Included candidates as a bitmask; bit `k` is the k-th candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mask(pub u64);

impl Mask {
    pub const EMPTY: Mask = Mask(0);

    pub fn full(len: usize) -> Mask {
        if len >= 64 {
            Mask(u64::MAX)
        } else {
            Mask((1u64 << len) - 1)
        }
    }

    pub fn from_indices(indices: &[usize]) -> Mask {
        Mask(indices.iter().fold(0u64, |m, &i| m | (1u64 << i)))
    }

    pub fn contains(self, k: usize) -> bool {
        self.0 >> k & 1 == 1
    }

    pub fn with(self, k: usize) -> Mask {
        Mask(self.0 | (1u64 << k))
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn indices(self) -> Vec<usize> {
        (0..64).filter(|&k| self.contains(k)).collect()
    }
}

/// A subset of one stage's candidate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub included: Mask,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub spec: ModelSpec,
    /// Fit of `response ~ 1 + selected`; coefficient 0 is the intercept,
    /// the rest follow the candidate order of `spec.included.indices()`.
    pub fit: LeastSquaresFit,
    pub bic: f64,
    pub weight: f64,
}

impl ScoredModel {
    /// Coefficient on candidate `k`, zero when excluded.
    pub fn coefficient(&self, k: usize) -> f64 {
        self.position(k).map_or(0.0, |pos| self.fit.coefficients[pos + 1])
    }

    /// Variance of the coefficient on candidate `k`, zero when excluded.
    pub fn coefficient_variance(&self, k: usize) -> f64 {
        self.position(k)
            .map_or(0.0, |pos| self.fit.coefficient_covariance[(pos + 1, pos + 1)])
    }

    fn position(&self, k: usize) -> Option<usize> {
        if !self.spec.included.contains(k) {
            return None;
        }
        Some((self.spec.included.0 & ((1u64 << k) - 1)).count_ones() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub occam_ratio: f64,
    pub max_model_size: Option<usize>,
    pub exhaustive_threshold: usize,
    pub nbest_per_size: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { occam_ratio: 20.0, max_model_size: None, exhaustive_threshold: 20, nbest_per_size: 150 }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.occam_ratio > 1.0) || !self.occam_ratio.is_finite() {
            return Err(Error::InvalidOptions(format!(
                "occam_ratio must be a finite number > 1, got {}",
                self.occam_ratio
            )));
        }
        if self.exhaustive_threshold > 25 {
            return Err(Error::InvalidOptions(format!(
                "exhaustive_threshold must be <= 25, got {}",
                self.exhaustive_threshold
            )));
        }
        if self.nbest_per_size == 0 {
            return Err(Error::InvalidOptions("nbest_per_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Models whose BIC exceeds the best by more than this are outside the window.
    pub fn bic_window(&self) -> f64 {
        2.0 * self.occam_ratio.ln()
    }
}

/// `n ln(1 - R²) + k ln(n)`, with `k` excluding the intercept.
pub fn bic_score(r_squared: f64, k: usize, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&r_squared) {
        return Err(Error::InvalidArgument(format!("R^2 must lie in [0, 1], got {r_squared}")));
    }
    if r_squared >= 1.0 {
        return Err(Error::DegenerateFit(r_squared));
    }
    if n <= k + 1 {
        return Err(Error::InsufficientObservations { n, needed: k + 1 });
    }
    let nf = n as f64;
    Ok(nf * (1.0 - r_squared).ln() + k as f64 * nf.ln())
}

/// Retained models of one search, ordered by descending weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub labels: Vec<String>,
    pub stage: Stage,
    pub models: Vec<ScoredModel>,
    /// Subsets skipped because their design was rank deficient.
    pub rank_exclusions: u64,
    /// Subsets skipped because they fit the response (numerically) perfectly.
    pub degenerate: u64,
    /// Number of subsets whose RSS was evaluated.
    pub evaluated: u64,
    pub exhaustive: bool,
}

impl ModelSet {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn best(&self) -> &ScoredModel {
        &self.models[0]
    }

    pub fn total_weight(&self) -> f64 {
        self.models.iter().map(|m| m.weight).sum()
    }
}

/// Sum of the weights of retained models that include `variable`.
pub fn inclusion_probability(retained: &ModelSet, variable: &str) -> Result<f64> {
    let k = retained
        .index_of(variable)
        .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
    Ok(retained
        .models
        .iter()
        .filter(|m| m.spec.included.contains(k))
        .map(|m| m.weight)
        .sum())
}

/// Descending weight, ties broken by ascending mask.
pub(crate) fn weight_order(a: (f64, Mask), b: (f64, Mask)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Applies Occam's window to `(mask, bic)` pairs and returns normalized
/// weights in descending order.
pub fn occam_window(scored: &[(Mask, f64)], occam_ratio: f64) -> Vec<(Mask, f64, f64)> {
    let Some(best) = scored.iter().map(|s| s.1).min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let window = 2.0 * occam_ratio.ln();
    let mut kept: Vec<(Mask, f64, f64)> = scored
        .iter()
        .filter(|(_, bic)| bic - best <= window)
        .map(|&(m, bic)| (m, bic, (-(bic - best) / 2.0).exp()))
        .collect();
    let total: f64 = kept.iter().map(|k| k.2).sum();
    for k in kept.iter_mut() {
        k.2 /= total;
    }
    kept.sort_by(|a, b| weight_order((a.2, a.0), (b.2, b.0)));
    kept
}

/// Searches the subsets of `candidates` for `response ~ 1 + subset`.
///
/// Up to `exhaustive_threshold` candidates every subset is scored; beyond it
/// a branch-and-bound keeps the `nbest_per_size` lowest-RSS models of each
/// size. Occam's window is applied to the BIC of the surviving models.
pub fn search_models(
    candidates: &DesignMatrix,
    response: &DVector<f64>,
    options: &SearchOptions,
    stage: Stage,
) -> Result<ModelSet> {
    options.validate()?;
    let (n, p) = (candidates.nrows(), candidates.ncols());
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} candidate rows but response length {}",
            response.len()
        )));
    }
    if p > MAX_CANDIDATES {
        return Err(Error::InvalidOptions(format!(
            "{p} candidates exceed the limit of {MAX_CANDIDATES}"
        )));
    }
    let max_size = options.max_model_size.unwrap_or(p).min(p);
    if n <= max_size + 1 {
        return Err(Error::InsufficientObservations { n, needed: max_size + 1 });
    }
    let exhaustive = p <= options.exhaustive_threshold;
    let scores = enumerate_subsets(
        candidates.values(),
        response,
        max_size,
        if exhaustive { Strategy::Window } else { Strategy::BranchAndBound(options.nbest_per_size) },
        options.bic_window(),
    )?;

    let nf = n as f64;
    let ln_n = nf.ln();
    let scored: Vec<(Mask, f64)> = scores
        .models
        .iter()
        .map(|&(m, rss)| (m, nf * (rss / scores.tss).ln() + m.size() as f64 * ln_n))
        .collect();
    let kept = occam_window(&scored, options.occam_ratio);

    let mut rank_exclusions = scores.rank_deficient;
    let mut models = Vec::with_capacity(kept.len());
    for (mask, bic, weight) in kept {
        let design = intercept_design(&candidates.values().select_columns(&mask.indices()));
        match ols_fit_matrix(&design, response) {
            Ok(fit) => models.push(ScoredModel {
                spec: ModelSpec { included: mask, stage },
                fit,
                bic,
                weight,
            }),
            Err(Error::RankDeficient { .. }) => rank_exclusions += 1,
            Err(e) => return Err(e),
        }
    }
    if models.is_empty() {
        return Err(Error::NoValidModel);
    }
    let total: f64 = models.iter().map(|m| m.weight).sum();
    for m in models.iter_mut() {
        m.weight /= total;
    }

    Ok(ModelSet {
        labels: candidates.labels().to_vec(),
        stage,
        models,
        rank_exclusions,
        degenerate: scores.degenerate,
        evaluated: scores.evaluated,
        exhaustive,
    })
}

/// Fits a single fixed model, used when a stage's space is forced.
pub fn single_model(
    candidates: &DesignMatrix,
    response: &DVector<f64>,
    mask: Mask,
    stage: Stage,
) -> Result<ModelSet> {
    let cols = mask.indices();
    if cols.iter().any(|&c| c >= candidates.ncols()) {
        return Err(Error::InvalidArgument("mask refers to a missing candidate".into()));
    }
    let design: DMatrix<f64> = intercept_design(&candidates.values().select_columns(&cols));
    let fit = ols_fit_matrix(&design, response)?;
    let n = response.len();
    let bic = if fit.r_squared < 1.0 {
        bic_score(fit.r_squared, cols.len(), n)?
    } else {
        f64::NEG_INFINITY
    };
    Ok(ModelSet {
        labels: candidates.labels().to_vec(),
        stage,
        models: vec![ScoredModel { spec: ModelSpec { included: mask, stage }, fit, bic, weight: 1.0 }],
        rank_exclusions: 0,
        degenerate: 0,
        evaluated: 1,
        exhaustive: false,
    })
}
