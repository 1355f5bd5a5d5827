use super::aggregate::{grid, summarize};
use super::*;
use crate::test_support::{iv_system, stack, two_sls_oracle};

fn full_only() -> EngineOptions {
    EngineOptions { first_stage: SpaceRule::FullOnly, second_stage: SpaceRule::FullOnly, ..Default::default() }
}

fn run(data: &Dataset, options: &EngineOptions) -> (FirstStageResult, Vec<ConditionalSecondStage>) {
    let first = run_first_stage(data, options).unwrap();
    let cond = (0..first.combos.len()).map(|i| run_second_stage(data, &first, i, options).unwrap()).collect();
    (first, cond)
}

#[test]
fn evidence_boundaries() {
    assert_eq!(evidence_label(0.97), Evidence::Strong);
    assert_eq!(evidence_label(0.5), Evidence::Weak);
    assert_eq!(evidence_label(0.0), Evidence::Against);
    assert_eq!(evidence_label(0.75), Evidence::Positive);
    assert_eq!(evidence_label(0.99), Evidence::VeryStrong);
    assert_eq!(Evidence::VeryStrong.to_string(), "very strong");
}

#[test]
fn two_model_mixture_arithmetic() {
    let s = summarize("b", [(0.5, true, 1.0, 1.0), (0.5, true, 3.0, 1.0)]);
    assert!((s.unconditional_mean - 2.0).abs() < 1e-12);
    assert!((s.unconditional_sd.powi(2) - 2.0).abs() < 1e-12);
    let s = summarize("b", [(0.6, true, 2.0, 0.0), (0.4, false, 0.0, 0.0)]);
    assert!((s.inclusion_probability - 0.6).abs() < 1e-12);
    assert_eq!(s.conditional_mean, Some(2.0));
    assert!((s.unconditional_mean - 1.2).abs() < 1e-12);
}

#[test]
fn full_models_reproduce_two_stage_least_squares() {
    let data = iv_system(11, 80, 1, 3, 3, &[1.0, -0.5, 0.0]);
    let result = fit_two_stage(&data, &full_only()).unwrap();
    let oracle = two_sls_oracle(&data);
    for k in 0..result.point_estimate.len() {
        assert!((result.point_estimate[k] - oracle[k + 1]).abs() < 1e-8);
    }
    assert!((result.intercept - oracle[0]).abs() < 1e-8);
    assert_eq!(result.variance.between.iter().copied().fold(0.0, f64::max), 0.0);

    let classical = two_stage_least_squares(&data).unwrap();
    for k in 0..classical.coefficients.len() {
        assert!((classical.coefficients[k] - oracle[k + 1]).abs() < 1e-8);
    }
}

#[test]
fn dropping_a_covariate_from_both_stages_matches_reduced_oracle() {
    let data = iv_system(12, 90, 1, 3, 2, &[1.0, 0.7, 0.3]);
    let reduced = Dataset::new(
        "y",
        data.outcome.clone(),
        data.endogenous.clone(),
        data.covariates.select(&[0, 2]),
        data.instruments.clone(),
    )
    .unwrap();
    let oracle = two_sls_oracle(&reduced);

    // Force M = (Z, x1, x3) and L = (W, x1, x3) through the conditional path.
    let mut first = run_first_stage(&data, &full_only()).unwrap();
    let v = data.first_stage_candidates();
    let mask = Mask::from_indices(&[0, 1, 2, 4]);
    first.per_endogenous[0] =
        single_model(&v, &data.endogenous.column(0), mask, Stage::First).unwrap();
    let model = &first.per_endogenous[0].models[0];
    let fitted = &data.endogenous.column(0) - &model.fit.residuals;
    first.combos[0].fitted.set_column(0, &fitted);
    first.combos[0].union = mask;
    let candidates = fitted_design(&data, &first, 0).unwrap();
    let set = single_model(&candidates, &data.outcome, Mask::from_indices(&[0, 1, 3]), Stage::Second).unwrap();
    let m = &set.models[0];
    assert!((m.coefficient(0) - oracle[1]).abs() < 1e-8);
    assert!((m.coefficient(1) - oracle[2]).abs() < 1e-8);
    assert!((m.coefficient(3) - oracle[3]).abs() < 1e-8);
    assert_eq!(m.coefficient(2), 0.0);
}

#[test]
fn forced_first_stage_equals_ols_fit() {
    let data = iv_system(13, 60, 1, 2, 2, &[0.5, 0.5]);
    let first = run_first_stage(&data, &full_only()).unwrap();
    let design = data.first_stage_candidates().with_intercept();
    let fit = crate::numerics::ols_fit(&design, &data.endogenous.column(0)).unwrap();
    let expected = design.values() * &fit.coefficients;
    assert!((&first.combos[0].fitted.column(0) - expected).amax() < 1e-10);
    assert_eq!(first.combos[0].weight, 1.0);
}

#[test]
fn combo_weights_are_renormalized_products() {
    let data = iv_system(14, 120, 2, 2, 3, &[0.4, 0.0]);
    let first = run_first_stage(&data, &EngineOptions::default()).unwrap();
    let total: f64 = first.combos.iter().map(|c| c.weight).sum();
    assert!((total - 1.0).abs() < 1e-10);
    let product = |c: &Combo| -> f64 {
        c.models.iter().zip(&first.per_endogenous).map(|(&m, s)| s.models[m].weight).product()
    };
    let scale = first.combos[0].weight / product(&first.combos[0]);
    for c in &first.combos {
        assert!((c.weight - scale * product(c)).abs() < 1e-12);
    }
    let max = first.combos.iter().map(|c| c.weight).fold(0.0, f64::max);
    assert!(first.combos.iter().all(|c| c.weight >= max / 20.0 - 1e-15));
}

#[test]
fn product_weight_arithmetic() {
    let a: [f64; 2] = [0.7, 0.3];
    let b: [f64; 2] = [0.6, 0.4];
    let mut joint: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
    joint.sort_by(|x, y| y.total_cmp(x));
    let expected = [0.42, 0.28, 0.18, 0.12];
    for (j, e) in joint.iter().zip(expected) {
        assert!((j - e).abs() < 1e-12);
    }
}

#[test]
fn decomposition_and_inclusion_match_brute_force() {
    let data = iv_system(15, 100, 1, 4, 3, &[1.0, 0.2, 0.0, 0.0]);
    let options = EngineOptions::default();
    let (first, cond) = run(&data, &options);
    let result = aggregate(&first, &cond, &data).unwrap();
    for k in 0..result.labels.len() {
        let v = &result.variance;
        assert!((v.total[k] - v.flat[k]).abs() <= 1e-10 * v.flat[k].max(1.0));
        let brute: f64 = grid(&first, &cond)
            .filter(|&(i, j, _)| cond.iter().find(|c| c.combo_index == i).unwrap().retained.models[j].spec.included.contains(k))
            .map(|(_, _, w)| w)
            .sum();
        assert!((result.variables[k].inclusion_probability - brute).abs() < 1e-12);
    }
    let total: f64 = grid(&first, &cond).map(|t| t.2).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn deterministic() {
    let data = iv_system(16, 100, 1, 4, 3, &[1.0, 0.2, 0.0, 0.0]);
    let a = fit_two_stage(&data, &EngineOptions::default()).unwrap();
    let b = fit_two_stage(&data, &EngineOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn nesting_projection_cases() {
    let data = iv_system(17, 100, 1, 3, 2, &[2.0, 0.0, 0.0]);
    let first = run_first_stage(&data, &full_only()).unwrap();
    // Full first stage nests every covariate.
    let spec = ModelSpec { included: Mask::from_indices(&[0, 1, 3]), stage: Stage::Second };
    assert!(nesting_projection(&data, &first, 0, &spec).unwrap().amax() < 1e-10);
    let empty = ModelSpec { included: Mask::EMPTY, stage: Stage::Second };
    assert!(nesting_projection(&data, &first, 0, &empty).unwrap().amax() < 1e-10);
}

#[test]
fn nesting_projection_detects_omitted_covariate() {
    let data = iv_system(18, 200, 1, 2, 2, &[3.0, 0.0]);
    let mut first = run_first_stage(&data, &full_only()).unwrap();
    // First stage omits x1, which drives W strongly.
    let v = data.first_stage_candidates();
    let mask = Mask::from_indices(&[0, 1, 3]);
    let set = single_model(&v, &data.endogenous.column(0), mask, Stage::First).unwrap();
    let resid = set.models[0].fit.residuals.clone();
    first.combos[0].fitted.set_column(0, &(&data.endogenous.column(0) - &resid));
    first.combos[0].residuals.set_column(0, &resid);
    let spec = ModelSpec { included: Mask::from_indices(&[0, 1]), stage: Stage::Second };
    let pi = nesting_projection(&data, &first, 0, &spec).unwrap();

    // Oracle: direct regression of the residuals on [1, W-hat, x1].
    let ones = DMatrix::from_element(data.n(), 1, 1.0);
    let w_hat = first.combos[0].fitted.clone();
    let x1 = data.covariates.values().columns(0, 1).into_owned();
    let u = stack(&[&ones, &w_hat, &x1]);
    let oracle = (u.transpose() * &u).try_inverse().unwrap() * u.transpose() * resid;
    assert!((pi.column(0) - oracle).amax() < 1e-9);
    assert!(pi[(2, 0)].abs() > 0.5);
}

#[test]
fn dataset_validation() {
    let data = iv_system(19, 30, 1, 1, 1, &[0.0]);
    let clash = Dataset::new(
        "x1",
        data.outcome.clone(),
        data.endogenous.clone(),
        data.covariates.clone(),
        data.instruments.clone(),
    );
    assert!(clash.is_err());
    let no_w = Dataset::new(
        "y",
        data.outcome.clone(),
        DesignMatrix::empty(30),
        data.covariates.clone(),
        data.instruments.clone(),
    );
    assert!(no_w.is_err());
    let short = iv_system(20, 5, 1, 2, 2, &[0.0, 0.0]);
    assert!(matches!(
        run_first_stage(&short, &EngineOptions::default()),
        Err(Error::InsufficientObservations { .. })
    ));
}

#[test]
fn aggregate_rejects_missing_combos() {
    let data = iv_system(21, 60, 1, 2, 2, &[0.5, 0.0]);
    let (first, _) = run(&data, &full_only());
    assert!(matches!(aggregate(&first, &[], &data), Err(Error::EmptyModelSet)));
}
