use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{structural_residuals, Dataset};
use crate::error::Result;
use crate::numerics::{intercept_design, PivotedQr};

/// A single full-specification estimate over the structural regressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullModelFit {
    pub labels: Vec<String>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub sigma2: f64,
}

fn finish(
    data: &Dataset,
    design: &DMatrix<f64>,
    qr: &PivotedQr,
    coef: &DVector<f64>,
) -> Result<FullModelFit> {
    let structural = data.structural_regressors();
    let beta = coef.rows(1, coef.len() - 1).into_owned();
    let eta = structural_residuals(&structural, &data.outcome, coef[0], &beta);
    let sigma2 = eta.norm_squared() / (data.n() - design.ncols()) as f64;
    let cov = qr.unscaled_covariance()?;
    Ok(FullModelFit {
        labels: structural.labels().to_vec(),
        intercept: coef[0],
        coefficients: beta.iter().copied().collect(),
        standard_errors: (1..coef.len()).map(|k| (sigma2 * cov[(k, k)]).sqrt()).collect(),
        sigma2,
    })
}

/// Textbook 2SLS with every instrument and covariate.
pub fn two_stage_least_squares(data: &Dataset) -> Result<FullModelFit> {
    let first_design = intercept_design(data.first_stage_candidates().values());
    let first = PivotedQr::new(&first_design);
    let mut fitted = DMatrix::zeros(data.n(), data.p_w());
    for c in 0..data.p_w() {
        let w = data.endogenous.column(c);
        first.solve(&w)?;
        fitted.set_column(c, &first.fitted(&w));
    }
    let mut u_hat = DMatrix::zeros(data.n(), data.p_w() + data.p_x());
    u_hat.columns_mut(0, data.p_w()).copy_from(&fitted);
    u_hat.columns_mut(data.p_w(), data.p_x()).copy_from(data.covariates.values());
    let design = intercept_design(&u_hat);
    let qr = PivotedQr::new(&design);
    let coef = qr.solve(&data.outcome)?;
    finish(data, &design, &qr, &coef)
}

/// OLS of the outcome on every endogenous regressor and covariate.
pub fn ols_full(data: &Dataset) -> Result<FullModelFit> {
    let design = intercept_design(data.structural_regressors().values());
    let qr = PivotedQr::new(&design);
    let coef = qr.solve(&data.outcome)?;
    finish(data, &design, &qr, &coef)
}
