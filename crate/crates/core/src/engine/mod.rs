//! First-stage BMA per endogenous regressor, conditional second-stage BMA
//! per first-stage combination, and aggregation into the 2SBMA posterior.

mod aggregate;
mod classical;

pub use aggregate::{
    aggregate, evidence_label, mixture_moments, Evidence, MixtureMoments, ModelInventory, PairSummary, StageSummary,
    TwoStageResult, VariableSummary, VarianceDecomposition,
};
pub use classical::{ols_full, two_stage_least_squares, FullModelFit};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsOptions};
use crate::error::{Error, Result};
use crate::model_space::{search_models, single_model, Mask, ModelSet, ModelSpec, SearchOptions, Stage};
use crate::numerics::{intercept_design, DesignMatrix, PivotedQr};

/// Outcome, endogenous regressors, covariates and instruments on common rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub outcome_label: String,
    pub outcome: DVector<f64>,
    pub endogenous: DesignMatrix,
    pub covariates: DesignMatrix,
    pub instruments: DesignMatrix,
}

impl Dataset {
    pub fn new(
        outcome_label: impl Into<String>,
        outcome: DVector<f64>,
        endogenous: DesignMatrix,
        covariates: DesignMatrix,
        instruments: DesignMatrix,
    ) -> Result<Self> {
        let outcome_label = outcome_label.into();
        let n = outcome.len();
        for (name, m) in [("endogenous", &endogenous), ("covariates", &covariates), ("instruments", &instruments)] {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has {} rows, outcome has {n}",
                    m.nrows()
                )));
            }
        }
        if endogenous.ncols() == 0 {
            return Err(Error::InvalidArgument("at least one endogenous regressor is required".into()));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome `{outcome_label}`")));
        }
        let mut seen: Vec<&str> = vec![outcome_label.as_str()];
        for l in endogenous.labels().iter().chain(covariates.labels()).chain(instruments.labels()) {
            if seen.contains(&l.as_str()) {
                return Err(Error::InvalidArgument(format!("label `{l}` appears in more than one role")));
            }
            seen.push(l);
        }
        Ok(Self { outcome_label, outcome, endogenous, covariates, instruments })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn p_w(&self) -> usize {
        self.endogenous.ncols()
    }

    pub fn p_x(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn p_z(&self) -> usize {
        self.instruments.ncols()
    }

    /// First-stage candidates `V = (Z X)`.
    pub fn first_stage_candidates(&self) -> DesignMatrix {
        self.instruments
            .hstack(&self.covariates)
            .expect("role labels are disjoint and row counts agree")
    }

    /// Structural regressors `U = (W X)`.
    pub fn structural_regressors(&self) -> DesignMatrix {
        self.endogenous
            .hstack(&self.covariates)
            .expect("role labels are disjoint and row counts agree")
    }
}

/// How a stage's model space is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceRule {
    /// Subset search with Occam's window.
    #[default]
    Search,
    /// Only the model containing every candidate.
    FullOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    pub search: SearchOptions,
    pub first_stage: SpaceRule,
    pub second_stage: SpaceRule,
    pub diagnostics: DiagnosticsOptions,
}

/// One element of the cross product of per-endogenous first-stage models.
#[derive(Debug, Clone, PartialEq)]
pub struct Combo {
    /// For each endogenous column, an index into its retained model list.
    pub models: Vec<usize>,
    /// Joint weight `pi_i` after combination-level trimming.
    pub weight: f64,
    /// Union of the included first-stage candidates across endogenous columns.
    pub union: Mask,
    /// `V^(i) theta^(i)`, one column per endogenous regressor.
    pub fitted: DMatrix<f64>,
    /// `W - V^(i) theta^(i)`.
    pub residuals: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageResult {
    /// Labels of `V = (Z X)`.
    pub candidate_labels: Vec<String>,
    pub per_endogenous: Vec<ModelSet>,
    pub combos: Vec<Combo>,
}

impl FirstStageResult {
    pub fn first_stage_masks(&self, combo: usize) -> Vec<Mask> {
        self.combos[combo]
            .models
            .iter()
            .zip(&self.per_endogenous)
            .map(|(&m, set)| set.models[m].spec.included)
            .collect()
    }
}

fn check_observations(data: &Dataset) -> Result<()> {
    let needed = data.p_z() + data.p_x() + 1;
    if data.n() <= needed {
        return Err(Error::InsufficientObservations { n: data.n(), needed });
    }
    Ok(())
}

/// Searches the first-stage space for every endogenous column and forms the
/// weighted cross product of the retained models.
pub fn run_first_stage(data: &Dataset, options: &EngineOptions) -> Result<FirstStageResult> {
    check_observations(data)?;
    options.search.validate()?;
    let candidates = data.first_stage_candidates();
    let mut per_endogenous = Vec::with_capacity(data.p_w());
    for c in 0..data.p_w() {
        let response = data.endogenous.column(c);
        let set = match options.first_stage {
            SpaceRule::Search => search_models(&candidates, &response, &options.search, Stage::First)?,
            SpaceRule::FullOnly => single_model(&candidates, &response, Mask::full(candidates.ncols()), Stage::First)?,
        };
        per_endogenous.push(set);
    }

    // Cross product with product weights.
    let mut raw: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    for set in &per_endogenous {
        let mut next = Vec::with_capacity(raw.len() * set.models.len());
        for (idx, w) in &raw {
            for (m, model) in set.models.iter().enumerate() {
                let mut i = idx.clone();
                i.push(m);
                next.push((i, w * model.weight));
            }
        }
        raw = next;
    }
    let max = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    raw.retain(|r| r.1 >= max / options.search.occam_ratio);
    let total: f64 = raw.iter().map(|r| r.1).sum();
    raw.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let n = data.n();
    let combos = raw
        .into_iter()
        .map(|(models, w)| {
            let mut fitted = DMatrix::zeros(n, data.p_w());
            let mut residuals = DMatrix::zeros(n, data.p_w());
            let mut union = Mask::EMPTY;
            for (c, &m) in models.iter().enumerate() {
                let model = &per_endogenous[c].models[m];
                union = Mask(union.0 | model.spec.included.0);
                let w_col = data.endogenous.column(c);
                let fit_col = if model.spec.included == Mask::EMPTY {
                    // Intercept-only: an exactly constant fitted column.
                    DVector::from_element(n, model.fit.coefficients[0])
                } else {
                    &w_col - &model.fit.residuals
                };
                residuals.set_column(c, &(&w_col - &fit_col));
                fitted.set_column(c, &fit_col);
            }
            Combo { models, weight: w / total, union, fitted, residuals }
        })
        .collect();

    Ok(FirstStageResult { candidate_labels: candidates.labels().to_vec(), per_endogenous, combos })
}

/// Second-stage BMA conditional on one first-stage combination.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSecondStage {
    pub combo_index: usize,
    /// Candidates are the fitted endogenous columns followed by `X`.
    pub retained: ModelSet,
    /// `beta^(ij)` over `(W X)`, zero where excluded.
    pub per_model_beta: Vec<DVector<f64>>,
    pub per_model_intercept: Vec<f64>,
    /// Coefficient variances `Var(beta | M_i, L_j)` over `(W X)`.
    pub per_model_variance: Vec<DVector<f64>>,
    /// Structural residual variance used for `per_model_variance`.
    pub per_model_sigma2: Vec<f64>,
}

/// `U-hat^(i) = (W-hat^(i) X)` for a combination.
pub fn fitted_design(data: &Dataset, first: &FirstStageResult, combo_index: usize) -> Result<DesignMatrix> {
    let combo = first
        .combos
        .get(combo_index)
        .ok_or(Error::IndexOutOfRange { index: combo_index, len: first.combos.len() })?;
    let w_hat = DesignMatrix::new(combo.fitted.clone(), data.endogenous.labels().to_vec())?;
    w_hat.hstack(&data.covariates)
}

pub fn run_second_stage(
    data: &Dataset,
    first: &FirstStageResult,
    combo_index: usize,
    options: &EngineOptions,
) -> Result<ConditionalSecondStage> {
    let candidates = fitted_design(data, first, combo_index)?;
    let y = &data.outcome;
    let retained = match options.second_stage {
        SpaceRule::Search => match search_models(&candidates, y, &options.search, Stage::Second) {
            Err(Error::NoValidModel) => return Err(Error::DegenerateFirstStage(combo_index)),
            other => other?,
        },
        SpaceRule::FullOnly => {
            match single_model(&candidates, y, Mask::full(candidates.ncols()), Stage::Second) {
                Err(Error::RankDeficient { .. }) => return Err(Error::DegenerateFirstStage(combo_index)),
                other => other?,
            }
        }
    };

    let structural = data.structural_regressors();
    let q = candidates.ncols();
    let n = data.n();
    let mut per_model_beta = Vec::with_capacity(retained.models.len());
    let mut per_model_intercept = Vec::with_capacity(retained.models.len());
    let mut per_model_variance = Vec::with_capacity(retained.models.len());
    let mut per_model_sigma2 = Vec::with_capacity(retained.models.len());
    for model in &retained.models {
        let beta = DVector::from_fn(q, |k, _| model.coefficient(k));
        let intercept = model.fit.coefficients[0];
        let eta = structural_residuals(&structural, y, intercept, &beta);
        let dof = n - model.spec.included.size() - 1;
        let sigma2 = eta.norm_squared() / dof as f64;
        let scale = if model.fit.sigma2 > 0.0 { sigma2 / model.fit.sigma2 } else { 0.0 };
        let variance = DVector::from_fn(q, |k, _| model.coefficient_variance(k) * scale);
        per_model_beta.push(beta);
        per_model_intercept.push(intercept);
        per_model_variance.push(variance);
        per_model_sigma2.push(sigma2);
    }
    Ok(ConditionalSecondStage {
        combo_index,
        retained,
        per_model_beta,
        per_model_intercept,
        per_model_variance,
        per_model_sigma2,
    })
}

/// `Y - intercept - U beta` with the actual endogenous values.
pub fn structural_residuals(
    structural: &DesignMatrix,
    y: &DVector<f64>,
    intercept: f64,
    beta: &DVector<f64>,
) -> DVector<f64> {
    let mut eta = y - structural.values() * beta;
    eta.add_scalar_mut(-intercept);
    eta
}

/// `Pi-hat^(ij) = (U'U)^{-1} U' eps-hat^(i)` with `U = [1, U-hat^(ij)]`.
///
/// Rows follow the intercept and then the included second-stage candidates;
/// columns follow the endogenous regressors.
pub fn nesting_projection(
    data: &Dataset,
    first: &FirstStageResult,
    combo_index: usize,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let candidates = fitted_design(data, first, combo_index)?;
    let cols = spec.included.indices();
    if cols.iter().any(|&c| c >= candidates.ncols()) {
        return Err(Error::InvalidArgument("model refers to a missing second-stage candidate".into()));
    }
    let design = intercept_design(&candidates.values().select_columns(&cols));
    let qr = PivotedQr::new(&design);
    let eps = &first.combos[combo_index].residuals;
    let mut pi = DMatrix::zeros(design.ncols(), eps.ncols());
    for c in 0..eps.ncols() {
        let coef = qr.solve(&eps.column(c).into_owned())?;
        pi.set_column(c, &coef);
    }
    Ok(pi)
}

/// Full 2SBMA fit: both stages, aggregation and identification diagnostics.
pub fn fit_two_stage(data: &Dataset, options: &EngineOptions) -> Result<TwoStageResult> {
    let first = run_first_stage(data, options)?;
    let conditionals = (0..first.combos.len())
        .map(|i| run_second_stage(data, &first, i, options))
        .collect::<Result<Vec<_>>>()?;
    let mut result = aggregate(&first, &conditionals, data)?;
    result.diagnostics = Some(diagnostics::compute(data, &first, &conditionals, &options.diagnostics)?);
    Ok(result)
}

#[cfg(test)]
mod tests;
