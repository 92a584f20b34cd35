//! Experiment harness behavior on deliberately small instances: exact
//! recovery without noise, determinism, failure accounting and the shape
//! of the reported summaries.

use csvr::estimators::{EstimatorSpec, Hyperparams, Method, PenaltyKind};
use csvr::model_selection::CvGrid;
use csvr::shape::Shape;
use csvr::simulation::{
    run_experiment, run_experiment_with_config, DgpId, DgpSpec, ExperimentSpec,
};
use csvr::solver::SolverConfig;

fn small_grid() -> CvGrid {
    CvGrid {
        c_multipliers: vec![1.0, 5.0],
        epsilon_values: vec![0.0, 0.1],
        l_values: vec![0.5, 2.0],
        folds: 3,
        rng_seed: 0,
        prefer_larger_l: false,
    }
}

#[test]
fn cr_recovers_a_noiseless_concave_truth() {
    let spec = ExperimentSpec {
        dgp: DgpSpec { dgp: DgpId::I, n: 20, sigma: 1e-8, outliers: 0, seed: 11 },
        estimators: vec![EstimatorSpec::new(
            Method::Cr,
            Shape::concave(),
            Hyperparams::default(),
        )],
        grid: small_grid(),
        replicates: 1,
        test_size: 0,
    };
    // The tight default profile: interpolation accuracy is the point here.
    let result = run_experiment_with_config(&spec, &SolverConfig::default()).unwrap();
    let outcome = &result.estimators[0];
    assert_eq!(outcome.failures, 0);
    assert!(
        outcome.in_sample.mean <= 1e-6,
        "noiseless concave data should be interpolated, MSE {}",
        outcome.in_sample.mean
    );
}

#[test]
fn experiment_scores_are_reproducible() {
    let spec = ExperimentSpec {
        dgp: DgpSpec { dgp: DgpId::II, n: 25, sigma: 1.0, outliers: 0, seed: 4 },
        estimators: vec![
            EstimatorSpec::new(
                Method::Csvr { penalty: PenaltyKind::SquaredL2 },
                Shape::concave(),
                Hyperparams::default(),
            ),
            EstimatorSpec::new(Method::Cr, Shape::concave(), Hyperparams::default()),
        ],
        grid: small_grid(),
        replicates: 2,
        test_size: 15,
    };
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    for (ea, eb) in a.estimators.iter().zip(&b.estimators) {
        assert_eq!(ea.failures, eb.failures);
        for (sa, sb) in ea.scores.iter().zip(&eb.scores) {
            let (sa, sb) = (sa.as_ref().unwrap(), sb.as_ref().unwrap());
            assert_eq!(sa.in_sample_mse, sb.in_sample_mse, "bitwise reproducibility");
            assert_eq!(sa.out_of_sample_mse, sb.out_of_sample_mse);
            assert_eq!(sa.selected.c, sb.selected.c);
            assert_eq!(sa.selected.epsilon, sb.selected.epsilon);
        }
    }
}

#[test]
fn summaries_cover_all_replicates_and_holdout() {
    let spec = ExperimentSpec {
        dgp: DgpSpec { dgp: DgpId::II, n: 24, sigma: 1.0, outliers: 3, seed: 9 },
        estimators: vec![EstimatorSpec::new(
            Method::Csvr { penalty: PenaltyKind::SquaredL2 },
            Shape::concave(),
            Hyperparams::default(),
        )],
        grid: small_grid(),
        replicates: 3,
        test_size: 10,
    };
    let result = run_experiment(&spec).unwrap();
    let outcome = &result.estimators[0];
    assert_eq!(outcome.scores.len(), 3);
    assert_eq!(outcome.failures, 0);
    assert_eq!(outcome.in_sample.count, 3);
    let out = outcome.out_of_sample.expect("hold-out summary present");
    assert_eq!(out.count, 3);
    assert!(outcome.in_sample.mean >= 0.0 && out.mean >= 0.0);
    for score in outcome.scores.iter().flatten() {
        assert!(score.in_sample_mse >= 0.0);
        assert!(score.out_of_sample_mse.unwrap() >= 0.0);
    }
}

#[test]
fn failed_replicates_are_counted_and_excluded() {
    let spec = ExperimentSpec {
        dgp: DgpSpec { dgp: DgpId::I, n: 20, sigma: 1.0, outliers: 0, seed: 2 },
        estimators: vec![EstimatorSpec::new(
            Method::Csvr { penalty: PenaltyKind::SquaredL2 },
            Shape::concave(),
            Hyperparams::default(),
        )],
        grid: small_grid(),
        replicates: 2,
        test_size: 0,
    };
    let crippled = SolverConfig { max_iter: 1, polish: false, ..SolverConfig::fast_profile() };
    let result = run_experiment_with_config(&spec, &crippled).unwrap();
    let outcome = &result.estimators[0];
    assert_eq!(outcome.failures, 2);
    assert!(outcome.scores.iter().all(Option::is_none));
    assert_eq!(outcome.in_sample.count, 0);
}
