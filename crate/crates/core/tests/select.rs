mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use regime_switch::dataio::ObservationSeries;
use regime_switch::em::EmConfig;
use regime_switch::model::{Model, ModelParams, ModelSpec};
use regime_switch::select::{criteria, grid_search, lag_curve, CellStatus, Criterion};
use regime_switch::simulate::simulate;

fn quick_em() -> EmConfig {
    EmConfig { n_restarts: 2, max_iters: 200, ..EmConfig::default() }
}

#[test]
fn single_cell_matches_gaussian_var_likelihood() {
    let mut rng = common::rng(71);
    let truth = common::random_model(&mut rng, 2, 1, 1);
    let sim = simulate(&truth, 300, 71, 100).unwrap();
    let grid = grid_search(&sim.series, &[1], &[1], &ModelSpec::new(2, 1, 1), &quick_em()).unwrap();
    let cell = grid.cell(1, 1).unwrap();

    let b = common::ols(&sim.series, 1);
    let x = regime_switch::model::design_matrix(sim.series.data(), 1);
    let y = sim.series.data().rows(1, 299).into_owned();
    let e = &y - &x * b.transpose();
    let t = 299.0;
    let sigma = e.transpose() * &e / t;
    let want = -0.5 * t * (2.0 * (2.0 * std::f64::consts::PI).ln() + sigma.determinant().ln() + 2.0);
    let got = cell.log_likelihood.unwrap();
    assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    assert_eq!(cell.k, 2 + 4 + 3);
    assert_eq!(cell.status, CellStatus::Ok);
}

#[test]
fn constant_series_is_a_failed_cell() {
    let series = ObservationSeries::from_matrix(DMatrix::from_element(80, 1, 2.5), 1.0).unwrap();
    let grid = grid_search(&series, &[0, 1], &[1, 2], &ModelSpec::new(1, 1, 1), &quick_em()).unwrap();
    assert_eq!(grid.cells.len(), 4);
    assert!(!grid.failed().is_empty());
    for c in grid.failed() {
        assert!(c.log_likelihood.is_none() && c.criteria.is_none());
    }
    let csv = grid.to_csv();
    assert!(csv.contains("failed"));
}

#[test]
fn lag_curve_picks_the_true_order() {
    let spec = ModelSpec::new(1, 1, 3);
    let mut params = ModelParams::baseline(&spec, DMatrix::identity(1, 1));
    params.coeffs[0][0][(0, 0)] = 0.3;
    params.coeffs[0][1][(0, 0)] = -0.2;
    params.coeffs[0][2][(0, 0)] = 0.5;
    let truth = Model::new(spec, params).unwrap();
    let sim = simulate(&truth, 1500, 72, 200).unwrap();
    let grid = lag_curve(&sim.series, &[1, 2, 3, 4, 5], 1, &ModelSpec::new(1, 1, 1), &quick_em()).unwrap();
    assert_eq!(grid.best(Criterion::Bic).unwrap().lags, 3);
    assert_eq!(grid.best(Criterion::Hqc).unwrap().lags, 3);
    // likelihood never falls as lags are added on a common sample
    let ll: Vec<f64> = grid.cells.iter().map(|c| c.log_likelihood.unwrap()).collect();
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-6));
    assert_eq!(grid.t_eff, 1495);
}

#[test]
fn lag_curve_export_reports_seconds() {
    let mut rng = common::rng(73);
    let truth = common::random_model(&mut rng, 1, 1, 1);
    let sim = simulate(&truth, 200, 73, 50).unwrap();
    let times = (0..200).map(|i| i as f64 * 0.1).collect();
    let series = ObservationSeries::new(vec!["y".into()], vec![String::new()], sim.series.data().clone(), times, 0.1).unwrap();
    let grid = lag_curve(&series, &[1, 2, 3], 1, &ModelSpec::new(1, 1, 1), &quick_em()).unwrap();
    let csv = grid.lag_curve_csv(1);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "p,lag_seconds,M,loglik,aic,bic,hqc,k,status");
    let seconds: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(seconds.len(), 3);
    for (i, s) in seconds.iter().enumerate() {
        assert!((s - 0.1 * (i + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn grid_layout_and_reproducibility() {
    let truth = common::recovery_model();
    let sim = simulate(&truth, 400, 74, 100).unwrap();
    let lags = [0, 1, 2, 3, 4];
    let regimes = [1, 2, 3, 4, 5];
    let em = EmConfig { n_restarts: 1, max_iters: 60, seed: 3, ..EmConfig::default() };
    let a = grid_search(&sim.series, &lags, &regimes, &ModelSpec::new(2, 1, 1), &em).unwrap();
    let b = grid_search(&sim.series, &lags, &regimes, &ModelSpec::new(2, 1, 1), &em).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.cells.len(), 25);
    let order: Vec<(usize, usize)> = a.cells.iter().map(|c| (c.lags, c.regimes)).collect();
    let want: Vec<(usize, usize)> = lags.iter().flat_map(|&p| regimes.iter().map(move |&m| (p, m))).collect();
    assert_eq!(order, want);
    let table = a.likelihood_table_csv();
    assert_eq!(table.lines().next().unwrap(), "M,p0,p1,p2,p3,p4");
    assert_eq!(table.lines().count(), 6);
    let json: serde_json::Value = serde_json::from_str(&a.best_json(Criterion::Bic).unwrap()).unwrap();
    assert_eq!(json["criterion"], "bic");
    assert_eq!(json["t_eff"], 396);
}

#[test]
fn grid_rejects_bad_ranges() {
    let mut rng = common::rng(75);
    let series = common::random_series(&mut rng, 30, 2);
    let spec = ModelSpec::new(2, 1, 1);
    assert!(grid_search(&series, &[], &[1], &spec, &quick_em()).is_err());
    assert!(grid_search(&series, &[1], &[0], &spec, &quick_em()).is_err());
    assert!(grid_search(&series, &[8], &[4], &spec, &quick_em()).is_err());
}

proptest! {
    #[test]
    fn criteria_grow_with_parameter_count(ll in -1e4f64..1e4, k in 1usize..200, t in 10.0f64..1e5) {
        let a = criteria(ll, k, t).unwrap();
        let b = criteria(ll, k + 1, t).unwrap();
        prop_assert!(b.aic > a.aic && b.bic > a.bic && b.hqc > a.hqc);
        // ln T > 2 once T exceeds e^2
        prop_assert!(a.aic < a.bic);
    }

    #[test]
    fn criteria_fall_with_likelihood(ll in -1e4f64..1e4, gain in 1e-3f64..100.0, k in 1usize..50) {
        let a = criteria(ll, k, 500.0).unwrap();
        let b = criteria(ll + gain, k, 500.0).unwrap();
        prop_assert!(b.aic < a.aic && b.bic < a.bic && b.hqc < a.hqc);
    }
}
