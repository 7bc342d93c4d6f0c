mod common;

use covgm::experiment::{block_covariates, grid_s2, preset_spec, sample_loglinear};
use covgm::loglinear::{ObservationSet, ParameterSet};
use covgm::mle::{hessian, newton_fit, score, FitOptions};
use covgm::seed;
use rand::seq::SliceRandom;

const STEP: f64 = 1e-5;

fn fd_score(spec: &covgm::loglinear::ModelSpec, theta: &ParameterSet, data: &ObservationSet) -> Vec<f64> {
    let base = theta.flat();
    (0..base.len())
        .map(|k| {
            let mut up = base.clone();
            let mut down = base.clone();
            up[k] += STEP;
            down[k] -= STEP;
            (common::loglik_at(spec, &up, data) - common::loglik_at(spec, &down, data)) / (2.0 * STEP)
        })
        .collect()
}

#[test]
fn score_and_hessian_match_finite_differences() {
    let mut rng = seed::stream(2, &[]);
    for instance in 0..40 {
        let spec = common::random_spec(&mut rng, 4, 2);
        assert!(spec.dimension() <= 60);
        let truth = common::random_theta(&spec, 1.0, &mut rng);
        let data = common::simulate(&spec, &truth, 60, &mut rng);
        let theta = common::random_theta(&spec, 0.7, &mut rng);

        let analytic: Vec<f64> = score(&spec, &theta, &data).unwrap().iter().copied().collect();
        let numeric = fd_score(&spec, &theta, &data);
        let err = common::relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "instance {instance}: score relative error {err}");

        let h = hessian(&spec, &theta, &data).unwrap();
        let base = theta.flat();
        let d = base.len();
        let mut numeric_h = vec![0.0; d * d];
        for k in 0..d {
            let mut up = base.clone();
            let mut down = base.clone();
            up[k] += STEP;
            down[k] -= STEP;
            let su = score(&spec, &ParameterSet::from_flat(&spec, &up).unwrap(), &data).unwrap();
            let sd = score(&spec, &ParameterSet::from_flat(&spec, &down).unwrap(), &data).unwrap();
            for j in 0..d {
                numeric_h[j * d + k] = (su[j] - sd[j]) / (2.0 * STEP);
            }
        }
        let analytic_h: Vec<f64> = (0..d * d).map(|i| h[(i / d, i % d)]).collect();
        let err = common::relative_error(&analytic_h, &numeric_h);
        assert!(err < 1e-6, "instance {instance}: Hessian relative error {err}");
        let asymmetry = (&h - h.transpose()).amax();
        assert!(asymmetry <= 1e-12 * h.amax(), "Hessian asymmetry {asymmetry}");
    }
}

#[test]
fn newton_trace_is_monotone() {
    let mut rng = seed::stream(3, &[]);
    for _ in 0..30 {
        let spec = common::random_spec(&mut rng, 4, 2);
        let truth = common::random_theta(&spec, 1.0, &mut rng);
        let data = common::simulate(&spec, &truth, 500, &mut rng);
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        for pair in fit.log_likelihood_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12 * pair[0].abs(), "trace decreased: {pair:?}");
        }
        assert_eq!(*fit.log_likelihood_trace.last().unwrap(), fit.log_likelihood);
    }
}

#[test]
fn fit_ignores_row_order() {
    let mut rng = seed::stream(4, &[]);
    let spec = preset_spec("g4").unwrap();
    let truth = common::random_theta(&spec, 0.5, &mut rng);
    let data = common::simulate(&spec, &truth, 3000, &mut rng);
    let mut rows: Vec<_> = data.rows().iter().map(|r| (r.cell.clone(), r.covariates.clone())).collect();
    rows.shuffle(&mut rng);
    let shuffled = ObservationSet::from_rows(data.level_space().clone(), 1, rows).unwrap();
    let a = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
    let b = newton_fit(&spec, &shuffled, &FitOptions::default()).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.log_likelihood, b.log_likelihood);
}

#[test]
fn duplicated_data_doubles_score_and_hessian() {
    let mut rng = seed::stream(6, &[]);
    for _ in 0..20 {
        let spec = common::random_spec(&mut rng, 4, 2);
        let truth = common::random_theta(&spec, 1.0, &mut rng);
        let data = common::simulate(&spec, &truth, 80, &mut rng);
        let rows = data.rows().iter().chain(data.rows()).map(|r| (r.cell.clone(), r.covariates.clone()));
        let doubled = ObservationSet::from_rows(data.level_space().clone(), data.covariate_count(), rows).unwrap();
        let theta = common::random_theta(&spec, 1.0, &mut rng);
        assert_eq!(score(&spec, &theta, &doubled).unwrap(), score(&spec, &theta, &data).unwrap() * 2.0);
        assert_eq!(hessian(&spec, &theta, &doubled).unwrap(), hessian(&spec, &theta, &data).unwrap() * 2.0);
    }
}

#[test]
fn larger_samples_estimate_better() {
    let spec = preset_spec("g2").unwrap();
    let grid = grid_s2();
    let small: Vec<Vec<f64>> = block_covariates(&grid, 2500).into_iter().map(|x| vec![x]).collect();
    let large: Vec<Vec<f64>> = block_covariates(&grid, 40000).into_iter().map(|x| vec![x]).collect();
    let error = |covariates: &[Vec<f64>], truth: &ParameterSet, rng: &mut rand_chacha::ChaCha8Rng| {
        let data = sample_loglinear(&spec, truth, covariates, rng).unwrap();
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        fit.theta.flat().iter().zip(truth.flat()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let mut wins = 0;
    for r in 0..100 {
        let mut rng = seed::stream(7, &[r]);
        let truth = common::random_theta(&spec, 1.0, &mut rng);
        if error(&large, &truth, &mut rng) < error(&small, &truth, &mut rng) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "n = 40000 better in {wins} of 100 replications");
}
