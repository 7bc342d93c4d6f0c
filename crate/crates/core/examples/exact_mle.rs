//! Exact maximum likelihood for the two-vertex graph whose edge appears in
//! both the baseline and the slope, with Wald intervals.
//!
//! cargo run --release --example exact_mle

use covgm::experiment::{block_covariates, grid_s2, preset_spec, sample_loglinear};
use covgm::inference::standard_errors;
use covgm::loglinear::ParameterSet;
use covgm::mle::{newton_fit, FitOptions};
use covgm::seed;

fn main() -> covgm::Result<()> {
    let spec = preset_spec("g2").expect("built-in graph");
    let truth = ParameterSet::new(&spec, vec![vec![0.5, -0.3, 0.8], vec![-0.4, 0.6, -0.9]])?;
    let covariates: Vec<Vec<f64>> = block_covariates(&grid_s2(), 10_000).into_iter().map(|x| vec![x]).collect();
    let mut rng = seed::stream(1, &[]);
    let data = sample_loglinear(&spec, &truth, &covariates, &mut rng)?;

    let fit = newton_fit(&spec, &data, &FitOptions::default())?;
    let errors = standard_errors(&fit)?;
    println!("converged in {} iterations, log-likelihood {:.3}", fit.iterations, fit.log_likelihood);
    for (k, (estimate, true_value)) in fit.theta.flat().iter().zip(truth.flat()).enumerate() {
        println!(
            "{:>12}  true {true_value:+.3}  estimate {estimate:+.3} +- {:.3}",
            spec.parameter_label(k),
            1.96 * errors[k]
        );
    }
    Ok(())
}
