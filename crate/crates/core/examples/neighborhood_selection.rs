//! Plants a sparse dynamic Ising model, simulates it, and recovers the
//! baseline and slope graphs with birth-death MCMC.
//!
//! cargo run --release --example neighborhood_selection

use std::time::Instant;

use covgm::bdmcmc::{self, CombineRule, SelectOptions};
use covgm::experiment::{cyclic_covariates, grid_s2, random_ising_parameters, random_structure};
use covgm::ising::{gibbs_sample, GibbsOptions};
use covgm::seed;

fn main() -> covgm::Result<()> {
    let mut rng = seed::stream(7, &[]);
    let structure = random_structure(10, &[8, 8], &mut rng)?;
    let params = random_ising_parameters(&structure, 0.5, 0.5, &mut rng);
    let covariates: Vec<Vec<f64>> = cyclic_covariates(&grid_s2(), 40_000).into_iter().map(|x| vec![x]).collect();

    let start = Instant::now();
    let data = gibbs_sample(&structure, &params, &covariates, GibbsOptions::default(), 8)?;
    println!("simulated {} rows in {:.1?}", data.len(), start.elapsed());

    let options = SelectOptions {
        seed: 9,
        ..SelectOptions::default()
    };
    let start = Instant::now();
    let trace = bdmcmc::bdmcmc_run(&data, 0, &options)?;
    println!(
        "vertex 1: {} jumps, {} distinct scored states, {:.1?}",
        trace.entries.len(),
        trace.distinct_states,
        start.elapsed()
    );

    let start = Instant::now();
    let result = bdmcmc::select(&data, &options)?;
    println!("all vertices in {:.1?}", start.elapsed());
    for h in 0..structure.slot_count() {
        for rule in [CombineRule::And, CombineRule::Or] {
            let f1 = bdmcmc::f1_score(result.edges(rule, h), structure.edges(h));
            println!("slot {h} {rule}: {} edges, F1 {f1:.3}", result.edges(rule, h).len());
        }
    }
    Ok(())
}
