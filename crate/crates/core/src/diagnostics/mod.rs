//! Identification diagnostics: Sargan over-identification and Cragg–Donald
//! under-identification tests per model pair, their posterior-weighted
//! averages, and the classical full-model versions.
//!
//! All p-values are upper-tail: small values reject exogeneity (Sargan) or
//! reject under-identification (Cragg–Donald).

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{two_stage_least_squares, ConditionalSecondStage, Dataset, FirstStageResult};
use crate::error::{Error, Result};
use crate::model_space::Mask;
use crate::numerics::{chisq_upper_tail, sym_eigen, PivotedQr};

/// Statistics at or below this are treated as zero for zero-df references.
const POINT_MASS_TOLERANCE: f64 = 1e-8;

/// Which residuals enter the Sargan auxiliary regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SarganResiduals {
    /// `Y - U beta` with the actual endogenous values.
    Structural,
    /// `Y - U-hat beta`, the residuals of the second-stage regression itself.
    #[default]
    SecondStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsOptions {
    /// Use `#instruments - #endogenous` Sargan degrees of freedom instead of
    /// the count of included covariates and instruments minus one.
    pub conventional_sargan_df: bool,
    pub sargan_residuals: SarganResiduals,
}

/// Bits below `k`.
fn low(m: Mask, k: usize) -> Mask {
    Mask(if k >= 64 { m.0 } else { m.0 & ((1u64 << k) - 1) })
}

/// Bits from `k` upwards, shifted down to start at zero.
fn high(m: Mask, k: usize) -> Mask {
    Mask(if k >= 64 { 0 } else { m.0 >> k })
}

/// Which `X` and `Z` columns a model pair uses.
///
/// `first_stage` is a mask over `(Z X)`; `second_stage` over `(W X)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairColumns {
    pub instruments: Mask,
    pub first_covariates: Mask,
    pub second_covariates: Mask,
    pub second_endogenous: Mask,
}

impl PairColumns {
    pub fn new(data: &Dataset, first_stage: Mask, second_stage: Mask) -> Self {
        let (pz, pw) = (data.p_z(), data.p_w());
        Self {
            instruments: low(first_stage, pz),
            first_covariates: high(first_stage, pz),
            second_covariates: high(second_stage, pw),
            second_endogenous: low(second_stage, pw),
        }
    }

    /// All covariates appearing in either stage.
    pub fn covariate_union(&self) -> Mask {
        Mask(self.first_covariates.0 | self.second_covariates.0)
    }

    /// Covariates of the first stage that the second stage excludes.
    pub fn excluded_covariates(&self) -> Mask {
        Mask(self.first_covariates.0 & !self.second_covariates.0)
    }

    /// Size of the instrument set `Z_ij`.
    pub fn instrument_count(&self) -> usize {
        self.instruments.size() + self.excluded_covariates().size()
    }
}

/// Upper-tail p-value with zero df read as a point mass at zero.
/// Negative df yields `None`.
pub fn reference_p_value(statistic: f64, df: i64) -> Result<Option<f64>> {
    match df {
        d if d < 0 => Ok(None),
        0 => Ok(Some(if statistic > POINT_MASS_TOLERANCE { 0.0 } else { 1.0 })),
        d => chisq_upper_tail(statistic.max(0.0), d).map(Some),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SarganOutcome {
    /// `n R^2`; `None` when the auxiliary design is rank deficient.
    pub statistic: Option<f64>,
    pub df: i64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CraggDonaldOutcome {
    /// Minimum eigenvalue `g`; `None` when the pair has no instruments.
    pub statistic: Option<f64>,
    pub df: i64,
    pub p_value: f64,
}

/// Triangular factor of the centered `(Z X W Y)`.
///
/// Centering absorbs the intercept, and the columns of the factor have the
/// same inner products as the centered data, so every projection used by
/// the tests can be computed on vectors of length at most `p_Z + p_X + p_W + 1`.
#[derive(Debug, Clone)]
pub struct Projector {
    n: usize,
    p_z: usize,
    p_x: usize,
    p_w: usize,
    r: DMatrix<f64>,
}

impl Projector {
    pub fn new(data: &Dataset) -> Self {
        let (n, p_z, p_x, p_w) = (data.n(), data.p_z(), data.p_x(), data.p_w());
        let mut all = DMatrix::zeros(n, p_z + p_x + p_w + 1);
        let blocks = [data.instruments.values(), data.covariates.values(), data.endogenous.values()];
        let mut at = 0;
        for b in blocks {
            for j in 0..b.ncols() {
                let c = b.column(j);
                let mean = c.mean();
                all.set_column(at, &c.map(|v| v - mean));
                at += 1;
            }
        }
        let mean = data.outcome.mean();
        all.set_column(at, &data.outcome.map(|v| v - mean));
        let r = PivotedQr::new(&all).r_factor();
        Self { n, p_z, p_x, p_w, r }
    }

    fn columns(&self, instruments: Mask, covariates: Mask) -> DMatrix<f64> {
        let idx: Vec<usize> = instruments
            .indices()
            .into_iter()
            .chain(covariates.indices().into_iter().map(|k| self.p_z + k))
            .collect();
        self.r.select_columns(&idx)
    }

    fn endogenous(&self) -> DMatrix<f64> {
        self.r.columns(self.p_z + self.p_x, self.p_w).into_owned()
    }

    /// Centered `Y - U beta` with `beta` over `(W X)`. With first-stage masks
    /// over `(Z X)`, each endogenous column is replaced by its fitted values.
    fn residuals(&self, beta: &DVector<f64>, first_stage: Option<&[Mask]>) -> DVector<f64> {
        let mut eta = self.r.column(self.p_z + self.p_x + self.p_w).into_owned();
        for k in 0..self.p_w {
            let w = self.r.column(self.p_z + self.p_x + k).into_owned();
            let w = match first_stage {
                Some(masks) => {
                    let m = masks[k];
                    let cols = self.columns(low(m, self.p_z), high(m, self.p_z));
                    PivotedQr::new(&cols).fitted(&w)
                }
                None => w,
            };
            eta.axpy(-beta[k], &w, 1.0);
        }
        for k in 0..self.p_x {
            eta.axpy(-beta[self.p_w + k], &self.r.column(self.p_z + k), 1.0);
        }
        eta
    }

    /// `n R^2` of the centered `target` on the given columns, with intercept.
    fn n_r_squared(&self, target: &DVector<f64>, regressors: &DMatrix<f64>, df: i64) -> Result<SarganOutcome> {
        let qr = PivotedQr::new(regressors);
        if qr.rank() < regressors.ncols() || self.n <= regressors.ncols() + 1 {
            return Ok(SarganOutcome { statistic: None, df, p_value: None });
        }
        let tss = target.norm_squared();
        let r2 = if tss > 0.0 { (1.0 - qr.residuals(target).norm_squared() / tss).clamp(0.0, 1.0) } else { 0.0 };
        let statistic = self.n as f64 * r2;
        Ok(SarganOutcome { statistic: Some(statistic), df, p_value: reference_p_value(statistic, df)? })
    }
}

fn sargan_df(columns: &PairColumns, options: &DiagnosticsOptions) -> i64 {
    if options.conventional_sargan_df {
        columns.instrument_count() as i64 - columns.second_endogenous.size() as i64
    } else {
        (columns.instruments.size() + columns.covariate_union().size()) as i64 - 1
    }
}

/// Sargan test for one model pair.
///
/// The residuals of the pair are regressed on the `Z` of the first stage and
/// the `X` of either stage. `first_stage` holds one mask over `(Z X)` per
/// endogenous column and is used only for second-stage residuals.
pub fn sargan_per_model(
    projector: &Projector,
    columns: &PairColumns,
    first_stage: &[Mask],
    beta: &DVector<f64>,
    options: &DiagnosticsOptions,
) -> Result<SarganOutcome> {
    let eta = match options.sargan_residuals {
        SarganResiduals::Structural => projector.residuals(beta, None),
        SarganResiduals::SecondStage => projector.residuals(beta, Some(first_stage)),
    };
    let regressors = projector.columns(columns.instruments, columns.covariate_union());
    projector.n_r_squared(&eta, &regressors, sargan_df(columns, options))
}

/// Cragg–Donald minimum-eigenvalue test for one model pair.
pub fn cragg_donald_per_model(projector: &Projector, columns: &PairColumns) -> Result<CraggDonaldOutcome> {
    let count = columns.instrument_count();
    let df = count as i64 - 1;
    if count == 0 {
        return Ok(CraggDonaldOutcome { statistic: None, df, p_value: 1.0 });
    }
    let w = projector.endogenous();

    let all = projector.columns(columns.instruments, columns.covariate_union());
    let resid_v = PivotedQr::new(&all).residual_matrix(&w);
    let sigma = resid_v.transpose() * &resid_v;

    let qr_x = PivotedQr::new(&projector.columns(Mask::EMPTY, columns.second_covariates));
    let w_perp = qr_x.residual_matrix(&w);
    let z_perp = qr_x.residual_matrix(&projector.columns(columns.instruments, columns.excluded_covariates()));
    let qr_z = PivotedQr::new(&z_perp);
    let mut projected = DMatrix::zeros(w_perp.nrows(), w_perp.ncols());
    for c in 0..w_perp.ncols() {
        projected.set_column(c, &qr_z.fitted(&w_perp.column(c).into_owned()));
    }
    let theta = projected.transpose() * &projected;

    let root = sym_eigen(&sigma)?.inverse_sqrt()?;
    let g_matrix = &root * theta * &root;
    let g_matrix = (&g_matrix + g_matrix.transpose()) * 0.5;
    let g = sym_eigen(&g_matrix)?.min().max(0.0);
    let p_value = reference_p_value(projector.n as f64 * g, df)?.unwrap_or(1.0);
    Ok(CraggDonaldOutcome { statistic: Some(g), df, p_value })
}

/// Weighted average of the defined p-values, renormalizing over them.
pub fn weighted_p_value<I>(entries: I) -> Option<f64>
where
    I: IntoIterator<Item = (f64, Option<f64>)>,
{
    let (mut num, mut den) = (0.0, 0.0);
    for (w, p) in entries {
        if let Some(p) = p {
            num += w * p;
            den += w;
        }
    }
    (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub combo: usize,
    /// Second-stage mask over `(W X)`.
    pub second_stage: u64,
    pub weight: f64,
    pub sargan: SarganOutcome,
    pub cragg_donald: CraggDonaldOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `None` when no pair yields a defined Sargan p-value.
    pub bayesian_sargan: Option<f64>,
    pub classical_sargan: Option<f64>,
    pub classical_sargan_statistic: Option<f64>,
    pub classical_sargan_df: i64,
    pub bayesian_cragg_donald: f64,
    pub classical_cragg_donald: f64,
    pub classical_cragg_donald_statistic: Option<f64>,
    pub per_model: Vec<PairDiagnostics>,
    /// Rank-deficient models discarded during either stage's search.
    pub rank_exclusions: u64,
    /// Pairs whose Sargan p-value is undefined and left out of the average.
    pub undefined_sargan: usize,
}

fn full_columns(data: &Dataset) -> PairColumns {
    PairColumns {
        instruments: Mask::full(data.p_z()),
        first_covariates: Mask::full(data.p_x()),
        second_covariates: Mask::full(data.p_x()),
        second_endogenous: Mask::full(data.p_w()),
    }
}

/// Classical Sargan from full-specification 2SLS residuals, regressed on
/// every covariate and instrument.
pub fn classical_sargan(data: &Dataset, options: &DiagnosticsOptions) -> Result<SarganOutcome> {
    classical_sargan_with(&Projector::new(data), data, options)
}

fn classical_sargan_with(projector: &Projector, data: &Dataset, options: &DiagnosticsOptions) -> Result<SarganOutcome> {
    let columns = full_columns(data);
    let fit = match two_stage_least_squares(data) {
        Ok(fit) => fit,
        Err(Error::RankDeficient { .. }) => {
            return Ok(SarganOutcome { statistic: None, df: sargan_df(&columns, options), p_value: None });
        }
        Err(e) => return Err(e),
    };
    let masks = vec![Mask::full(data.p_z() + data.p_x()); data.p_w()];
    sargan_per_model(projector, &columns, &masks, &DVector::from_vec(fit.coefficients), options)
}

/// Classical Cragg–Donald with every instrument and covariate.
pub fn classical_cragg_donald(data: &Dataset) -> Result<CraggDonaldOutcome> {
    cragg_donald_per_model(&Projector::new(data), &full_columns(data))
}

/// Per-pair and averaged diagnostics over the retained grid.
pub fn compute(
    data: &Dataset,
    first: &FirstStageResult,
    conditionals: &[ConditionalSecondStage],
    options: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    if conditionals.is_empty() {
        return Err(Error::EmptyModelSet);
    }
    let projector = Projector::new(data);
    // The Cragg-Donald statistic depends only on which X and Z columns are used.
    let mut cd_cache: HashMap<(u64, u64, u64), CraggDonaldOutcome> = HashMap::new();
    let mut per_model = Vec::new();
    for c in conditionals {
        let combo = &first.combos[c.combo_index];
        let masks = first.first_stage_masks(c.combo_index);
        for (j, m) in c.retained.models.iter().enumerate() {
            let columns = PairColumns::new(data, combo.union, m.spec.included);
            let key = (columns.instruments.0, columns.first_covariates.0, columns.second_covariates.0);
            let cragg_donald = match cd_cache.get(&key) {
                Some(cd) => *cd,
                None => {
                    let cd = cragg_donald_per_model(&projector, &columns)?;
                    cd_cache.insert(key, cd);
                    cd
                }
            };
            per_model.push(PairDiagnostics {
                combo: c.combo_index,
                second_stage: m.spec.included.0,
                weight: combo.weight * m.weight,
                sargan: sargan_per_model(&projector, &columns, &masks, &c.per_model_beta[j], options)?,
                cragg_donald,
            });
        }
    }
    let undefined_sargan = per_model.iter().filter(|p| p.sargan.p_value.is_none()).count();
    if undefined_sargan > 0 {
        warn!("{undefined_sargan} model pairs have an undefined Sargan p-value and are left out of the average");
    }
    let bayesian_sargan = weighted_p_value(per_model.iter().map(|p| (p.weight, p.sargan.p_value)));
    let bayesian_cragg_donald =
        weighted_p_value(per_model.iter().map(|p| (p.weight, Some(p.cragg_donald.p_value)))).unwrap_or(1.0);
    let classical = classical_sargan_with(&projector, data, options)?;
    let classical_cd = cragg_donald_per_model(&projector, &full_columns(data))?;
    let rank_exclusions = first.per_endogenous.iter().map(|s| s.rank_exclusions).sum::<u64>()
        + conditionals.iter().map(|c| c.retained.rank_exclusions).sum::<u64>();
    Ok(DiagnosticsReport {
        bayesian_sargan,
        classical_sargan: classical.p_value,
        classical_sargan_statistic: classical.statistic,
        classical_sargan_df: classical.df,
        bayesian_cragg_donald,
        classical_cragg_donald: classical_cd.p_value,
        classical_cragg_donald_statistic: classical_cd.statistic,
        per_model,
        rank_exclusions,
        undefined_sargan,
    })
}
