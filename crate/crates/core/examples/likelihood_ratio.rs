//! Tests whether the covariate changes the association structure, with the
//! likelihood-ratio test and the Wald test of the slope block.
//!
//! cargo run --release --example likelihood_ratio

use covgm::experiment::{block_covariates, drop_slots, grid_s2, preset_spec, sample_loglinear};
use covgm::inference::{lrt, wald_test_slot};
use covgm::loglinear::ParameterSet;
use covgm::mle::{newton_fit, FitOptions};
use covgm::seed;

fn main() -> covgm::Result<()> {
    let full = preset_spec("g4").expect("built-in graph");
    let null = drop_slots(&full, &[1])?;
    let covariates: Vec<Vec<f64>> = block_covariates(&grid_s2(), 5000).into_iter().map(|x| vec![x]).collect();
    let options = FitOptions::default();

    for gamma in [0.0, 0.3] {
        let mut rng = seed::stream(2, &[]);
        let baseline = vec![0.2; full.index_set(0).len()];
        let slope = vec![gamma; full.index_set(1).len()];
        let theta = ParameterSet::new(&full, vec![baseline, slope])?;
        let data = sample_loglinear(&full, &theta, &covariates, &mut rng)?;

        let test = lrt(&full, &null, &data, &options)?;
        let wald = wald_test_slot(&full, &newton_fit(&full, &data, &options)?, 1)?;
        println!(
            "slope {gamma}: LRT {:.2} on {} df (p = {:.3e}), Wald {:.2} (p = {:.3e})",
            test.statistic, test.degrees_of_freedom, test.p_value, wald.statistic, wald.p_value
        );
    }
    Ok(())
}
