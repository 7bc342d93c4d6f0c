//! Converts between row data and covariate-indexed contingency tables and
//! writes both the dataset and the model to disk.
//!
//! cargo run --release --example contingency_tables

use covgm::experiment::sample_loglinear;
use covgm::io::{read_model_spec, read_observations, write_model_spec, write_observations, ModelFile};
use covgm::loglinear::{GeneratingClass, LevelSpace, ModelSpec, ObservationSet};
use covgm::seed;

fn main() -> covgm::Result<()> {
    let space = LevelSpace::new(vec![3, 2, 2])?;
    let baseline = GeneratingClass::from_maximal(vec![vec![0, 1], vec![1, 2]])?;
    let slope = GeneratingClass::from_maximal(vec![vec![0]])?;
    let spec = ModelSpec::new(space, vec![baseline, slope])?;
    println!("{} parameters:", spec.dimension());
    for k in 0..spec.dimension() {
        println!("  {}", spec.parameter_label(k));
    }

    let mut rng = seed::stream(5, &[]);
    let theta = covgm::loglinear::ParameterSet::from_flat(&spec, &vec![0.3; spec.dimension()])?;
    let covariates: Vec<Vec<f64>> = (0..400).map(|m| vec![(m % 4) as f64 / 4.0]).collect();
    let data = sample_loglinear(&spec, &theta, &covariates, &mut rng)?;

    let table = data.to_contingency();
    println!("{} rows collapse to {} table entries", data.len(), table.entries.len());
    for entry in table.entries.iter().take(5) {
        println!("  cell {} at x = {:?}: {}", entry.cell, entry.covariates, entry.count);
    }
    let expanded = ObservationSet::from_contingency(&table)?;
    assert_eq!(expanded.to_contingency(), table);

    let dir = std::env::temp_dir().join("covgm-contingency-example");
    write_observations(&dir.join("data.csv"), &data)?;
    let model = ModelFile::Loglinear { spec: spec.clone(), parameters: Some(theta) };
    write_model_spec(&dir.join("model.json"), &model)?;
    assert_eq!(read_model_spec(&dir.join("model.json"))?, model);
    assert_eq!(read_observations(&dir.join("data.csv"), spec.level_space())?.len(), data.len());
    println!("wrote {}", dir.display());
    Ok(())
}
