use covgm::experiment::{block_covariates, drop_slots, grid_s2, preset_spec, sample_loglinear};
use covgm::inference::{chi_square_upper_tail, lrt, wald_test_slot};
use covgm::loglinear::{ModelSpec, ParameterSet};
use covgm::mle::{newton_fit, FitOptions};
use covgm::seed;
use rand::Rng;
use rand_distr::StandardNormal;

fn draw(spec: &ModelSpec, gamma: f64, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> covgm::loglinear::ObservationSet {
    let baseline: Vec<f64> = (0..spec.index_set(0).len()).map(|_| rng.sample(StandardNormal)).collect();
    let theta = ParameterSet::new(spec, vec![baseline, vec![gamma; spec.index_set(1).len()]]).unwrap();
    let covariates: Vec<Vec<f64>> = block_covariates(&grid_s2(), n).into_iter().map(|x| vec![x]).collect();
    sample_loglinear(spec, &theta, &covariates, rng).unwrap()
}

#[test]
fn null_calibration_of_wald_and_lrt() {
    let spec = preset_spec("g2").unwrap();
    let null = drop_slots(&spec, &[1]).unwrap();
    let k = spec.dimension() - null.dimension();
    let reps = 500;
    let mut wald_rejections = 0;
    let mut statistics = Vec::new();
    for r in 0..reps {
        let mut rng = seed::stream(21, &[r]);
        let data = draw(&spec, 0.0, 2000, &mut rng);
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        let null_fit = newton_fit(&null, &data, &FitOptions::default()).unwrap();
        assert!(fit.log_likelihood >= null_fit.log_likelihood - 1e-8, "nested fit is worse");
        if wald_test_slot(&spec, &fit, 1).unwrap().rejects_at(0.05) {
            wald_rejections += 1;
        }
        statistics.push(lrt(&spec, &null, &data, &FitOptions::default()).unwrap().statistic);
    }
    let rate = wald_rejections as f64 / reps as f64;
    assert!((rate - 0.05).abs() <= 0.03, "Wald type I error {rate}");
    let mean = statistics.iter().sum::<f64>() / reps as f64;
    let band = 3.0 * (2.0 * k as f64 / reps as f64).sqrt();
    assert!((mean - k as f64).abs() <= band, "LRT mean {mean}, df {k}, band {band}");
}

#[test]
fn power_grows_with_effect_size() {
    let spec = preset_spec("g2").unwrap();
    let null = drop_slots(&spec, &[1]).unwrap();
    let mut rejections = Vec::new();
    for gamma in [0.0, 0.15, 0.3, 0.6] {
        let mut count = 0;
        for r in 0..100 {
            let mut rng = seed::stream(22, &[r]);
            let data = draw(&spec, gamma, 2000, &mut rng);
            if lrt(&spec, &null, &data, &FitOptions::default()).unwrap().rejects_at(0.05) {
                count += 1;
            }
        }
        rejections.push(count);
    }
    assert!(rejections.windows(2).all(|w| w[0] <= w[1]), "rejections {rejections:?}");
    assert!(rejections[3] >= 90, "rejections {rejections:?}");
}

/// `erfc(a)` by composite Simpson quadrature of `2/sqrt(pi) exp(-u^2)` on `[a, a + 12]`.
fn erfc_quadrature(a: f64) -> f64 {
    let intervals = 200_000;
    let width = 12.0 / intervals as f64;
    let f = |u: f64| (-u * u).exp();
    let mut sum = f(a) + f(a + 12.0);
    for i in 1..intervals {
        let u = a + i as f64 * width;
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(u);
    }
    sum * width / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

/// `Q(df/2, x/2)`: closed form for even degrees of freedom, quadrature for
/// `df = 1`, then `Q(a + 1, z) = Q(a, z) + z^a e^{-z} / Gamma(a + 1)`.
fn tail_oracle(x: f64, df: usize) -> f64 {
    let z = x / 2.0;
    let (mut a, mut q, mut term) = if df.is_multiple_of(2) {
        (1.0, (-z).exp(), z * (-z).exp())
    } else {
        let gamma_three_halves = std::f64::consts::PI.sqrt() / 2.0;
        (0.5, erfc_quadrature(z.sqrt()), z.sqrt() * (-z).exp() / gamma_three_halves)
    };
    while a < df as f64 / 2.0 {
        q += term;
        a += 1.0;
        term *= z / a;
    }
    q
}

#[test]
fn chi_square_tail_matches_oracle() {
    for df in 1..=12 {
        for &x in &[0.05, 0.5, 1.0, 2.5, 5.0, 10.0, 20.0, 35.0] {
            let expected = tail_oracle(x, df);
            let got = chi_square_upper_tail(x, df);
            assert!((got - expected).abs() <= 1e-10, "df {df}, x {x}: {got} vs {expected}");
        }
    }
    assert_eq!(chi_square_upper_tail(0.0, 3), 1.0);
}
