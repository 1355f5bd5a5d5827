use super::*;

fn corr(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn structural_error(d: &Dataset) -> DVector<f64> {
    let x = |k: usize| d.covariates.column(k - 1);
    let mut r = &d.outcome - d.endogenous.column(0);
    r.axpy(-1.8, &x(1), 1.0);
    r.axpy(-1.5, &x(2), 1.0);
    r.axpy(-1.0, &x(11), 1.0);
    r.axpy(1.5, &x(12), 1.0);
    r / 2.0
}

#[test]
fn correlated_block_matches_theory() {
    let d = generate(3, 0, 100_000, Scenario::Valid);
    let x = |k: usize| d.covariates.column(k - 1);
    let z = |k: usize| d.instruments.column(k - 1);
    let expected = |l: f64| l / 3.85f64.sqrt();
    assert!((corr(&x(1), &x(11)) - expected(0.3)).abs() < 0.01);
    assert!((corr(&x(5), &x(11)) - expected(1.1)).abs() < 0.01);
    assert!((corr(&z(5), &z(8)) - expected(1.1)).abs() < 0.01);
    assert!(corr(&x(1), &x(2)).abs() < 0.01);
}

#[test]
fn valid_scenario_error_is_exogenous() {
    let d = generate(4, 0, 100_000, Scenario::Valid);
    let eta = structural_error(&d);
    for k in 0..INSTRUMENTS {
        assert!(corr(&eta, &d.instruments.column(k)).abs() <= 0.02);
    }
    let bad = generate(4, 0, 100_000, Scenario::Invalid);
    assert!(corr(&structural_error(&bad), &bad.instruments.column(0)) > 0.3);
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let config = SimConfig { seed: 9, ..Default::default() };
    assert_eq!(generate_dataset(&config, 3), generate_dataset(&config, 3));
    assert_ne!(generate_dataset(&config, 3).outcome, generate_dataset(&config, 4).outcome);
    let other = SimConfig { seed: 10, ..Default::default() };
    assert_ne!(generate_dataset(&config, 3).outcome, generate_dataset(&other, 3).outcome);
}

#[test]
fn single_replicate_metrics_equal_raw_values() {
    let config = SimConfig { replications: 1, seed: 5, ..Default::default() };
    let records = run_records(&config).unwrap();
    let metrics = summarize(&config, &records);
    let r = &records[0];
    assert_eq!(metrics.failures, 0);
    for e in Estimator::ALL {
        let raw = r.estimate(e).unwrap();
        let m = metrics.estimator(e).unwrap();
        assert_eq!(m.mean_bias_of_beta_w, raw.beta_w - 1.0);
        assert_eq!(m.mse_full_beta, raw.squared_error);
    }
    for (k, s) in metrics.second_stage_inclusion.iter().enumerate() {
        assert_eq!(s.median, r.second_stage_inclusion[k]);
        assert_eq!(s.q25, s.q75);
    }
    let expected = |p: Option<f64>| p.map(|p| if p < config.alpha { 1.0 } else { 0.0 });
    assert_eq!(metrics.sargan.bayesian_rejection_rate, expected(r.bayesian_sargan));
    assert_eq!(metrics.cragg_donald.classical_rejection_rate, expected(r.classical_cragg_donald));
}

#[test]
fn classical_only_study_skips_model_averaging() {
    let config = SimConfig {
        replications: 2,
        seed: 6,
        estimators: vec![Estimator::TwoSlsFull, Estimator::OlsFull],
        ..Default::default()
    };
    let metrics = run_study(&config).unwrap();
    assert!(metrics.estimator(Estimator::TwoStageBma).is_none());
    assert!(metrics.first_stage_inclusion.is_empty());
    assert!(metrics.sargan.bayesian_rejection_rate.is_none());
    assert!(metrics.sargan.classical_rejection_rate.is_some());
}

#[test]
fn type_seven_quantiles() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert_eq!(quantile(&v, 0.5), 2.5);
    assert_eq!(quantile(&v, 0.25), 1.75);
    assert_eq!(quantile(&v, 0.75), 3.25);
    assert_eq!(quantile(&[7.0], 0.3), 7.0);
}

#[test]
fn config_validation() {
    assert!(SimConfig { n: 49, ..Default::default() }.validate().is_err());
    assert!(SimConfig { replications: 0, ..Default::default() }.validate().is_err());
    assert!(SimConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
    assert!(SimConfig { estimators: vec![], ..Default::default() }.validate().is_err());
    assert!(SimConfig::default().validate().is_ok());
    assert_eq!("2SLS".parse::<Estimator>().unwrap(), Estimator::TwoSlsFull);
    assert!("liml".parse::<Estimator>().is_err());
}
