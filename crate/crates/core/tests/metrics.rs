//! ICP, MIL and RMSE against hand-computed tables and random-fixture properties.

mod common;

use holdwise::metrics::{build_report, icp, mil, rmse, HorizonForecasts, IntervalBounds, ModelForecasts};
use holdwise::multilink::empirical_interval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

fn hand_fixture() -> ModelForecasts {
    // The last case is masked out.
    let truth = vec![100.0, 120.0, 90.0, 130.0, 500.0];
    let point = vec![104.0, 117.0, 90.0, 140.0, 0.0];
    let mask = vec![1.0, 1.0, 1.0, 1.0, 0.0];
    let narrow = IntervalBounds {
        coverage: 0.2,
        lower: vec![98.0, 121.0, 90.0, 135.0, 0.0],
        upper: vec![106.0, 125.0, 94.0, 145.0, 0.0],
    };
    let wide = IntervalBounds {
        coverage: 0.9,
        lower: vec![80.0, 100.0, 70.0, 120.0, 0.0],
        upper: vec![130.0, 140.0, 110.0, 150.0, 1.0],
    };
    let h1 = HorizonForecasts {
        truth,
        point,
        mask,
        intervals: vec![narrow, wide],
        link_truth: vec![50.0, 60.0],
        link_point: vec![53.0, 64.0],
        link_mask: vec![1.0, 1.0],
    };
    let mut h2 = h1.clone();
    h2.mask = vec![0.0; 5];
    h2.link_mask = vec![0.0; 2];
    ModelForecasts { model: "fixture".into(), horizons: vec![h1, h2] }
}

#[test]
fn hand_computed_report_table() {
    let report = build_report(&hand_fixture(), &[0.2, 0.9]).unwrap();
    let narrow = report.row(20.0, 1).unwrap();
    // Covered: 100 ∈ [98,106], 90 ∈ [90,94]; 120 ∉ [121,125]; 130 ∉ [135,145].
    assert_eq!(narrow.icp, Some(50.0));
    assert_eq!(narrow.mil, Some((8.0 + 4.0 + 4.0 + 10.0) / 4.0));
    assert_eq!(narrow.n, 4);
    let wide = report.row(90.0, 1).unwrap();
    assert_eq!(wide.icp, Some(100.0));
    assert_eq!(wide.mil, Some((50.0 + 40.0 + 40.0 + 30.0) / 4.0));
    let r = &report.rmse[0];
    assert_eq!(r.route_rmse, Some(((16.0 + 9.0 + 0.0 + 100.0) / 4.0f64).sqrt()));
    assert_eq!(r.link_rmse, Some(12.5f64.sqrt()));
    assert_eq!((r.n_route, r.n_link), (4, 2));
    let empty = report.row(90.0, 2).unwrap();
    assert_eq!((empty.icp, empty.mil, empty.n), (None, None, 0));
    assert_eq!(report.rmse[1].route_rmse, None);
    assert_eq!(report.intervals.len(), 4);
}

#[test]
fn elementary_metric_examples() {
    let m3 = [1.0; 3];
    assert!((icp(&[1.0, 2.0, 3.0], &[0.0; 3], &[2.0; 3], &m3).unwrap().unwrap() - 200.0 / 3.0).abs() < 1e-12);
    assert_eq!(icp(&[1.0, 2.0, 3.0], &[f64::NEG_INFINITY; 3], &[f64::INFINITY; 3], &m3).unwrap(), Some(100.0));
    assert_eq!(icp(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &m3).unwrap(), Some(100.0));
    assert_eq!(mil(&[0.0, 10.0], &[591.0, 601.0], &[1.0, 1.0]).unwrap(), Some(591.0));
    assert_eq!(mil(&[0.0, 0.0], &[100.0, 300.0], &[1.0, 1.0]).unwrap(), Some(200.0));
    assert_eq!(rmse(&[3.0, 4.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), Some(12.5f64.sqrt()));
    assert_eq!(icp(&[1.0], &[0.0], &[2.0], &[0.0]).unwrap(), None);
    assert!(icp(&[1.0], &[3.0], &[2.0], &[1.0]).is_err());
    assert!(rmse(&[1.0, 2.0], &[1.0], &[1.0, 1.0]).is_err());
}

#[test]
fn widening_never_lowers_coverage_over_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..300.0)).collect();
        let lower: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..300.0)).collect();
        let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.0..100.0)).collect();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.85) { 1.0 } else { 0.0 }).collect();
        let lower2: Vec<f64> = lower.iter().map(|l| l - rng.random_range(0.001..50.0)).collect();
        let upper2: Vec<f64> = upper.iter().map(|u| u + rng.random_range(0.001..50.0)).collect();
        match (icp(&y, &lower, &upper, &mask).unwrap(), icp(&y, &lower2, &upper2, &mask).unwrap()) {
            (Some(a), Some(b)) => {
                assert!(b >= a);
                assert!(mil(&lower2, &upper2, &mask).unwrap().unwrap() > mil(&lower, &upper, &mask).unwrap().unwrap());
            }
            (None, None) => {}
            other => panic!("coverage defined on one side only: {other:?}"),
        }
    }
}

#[test]
fn coverage_invariant_under_monotone_transform_and_rmse_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..2.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.0..2.0)).collect();
        let mask = vec![1.0; n];
        let f = |v: &[f64]| v.iter().map(|x| x.exp() * 7.0 + 2.0).collect::<Vec<_>>();
        assert_eq!(icp(&y, &lo, &hi, &mask).unwrap(), icp(&f(&y), &f(&lo), &f(&hi), &mask).unwrap());
        let yhat: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert_eq!(rmse(&y, &yhat, &mask).unwrap(), rmse(&yhat, &y, &mask).unwrap());
        let c = rng.random_range(-5.0..5.0);
        let zero = vec![0.0; n];
        let err: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
        let scaled: Vec<f64> = err.iter().map(|e| c * e).collect();
        let base = rmse(&err, &zero, &mask).unwrap().unwrap();
        let got = rmse(&scaled, &zero, &mask).unwrap().unwrap();
        assert!((got - c.abs() * base).abs() <= 1e-12 * (1.0 + base));
    }
}

#[test]
fn climatological_quantiles_are_calibrated_on_stationary_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let law = Gamma::new(9.0, 12.0).unwrap();
    let train: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng)).collect();
    let test: Vec<f64> = (0..20_000).map(|_| law.sample(&mut rng)).collect();
    let mask = vec![1.0; test.len()];
    for alpha in [0.2, 0.6, 0.8, 0.9, 0.95] {
        let (lo, hi) = empirical_interval(&train, alpha).unwrap();
        let got = icp(&test, &vec![lo; test.len()], &vec![hi; test.len()], &mask).unwrap().unwrap();
        assert!((got - 100.0 * alpha).abs() <= 3.0, "{alpha}: {got}");
    }
}
