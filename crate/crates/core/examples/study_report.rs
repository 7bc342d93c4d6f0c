//! Runs a reduced estimation-accuracy study and a reduced LRT study and
//! prints their report tables.
//!
//! cargo run --release --example study_report

use std::path::Path;

use covgm::experiment::{accuracy_study, lrt_study, GridSpec, TruthDraw};
use covgm::mle::FitOptions;

fn main() -> covgm::Result<()> {
    let graphs = vec!["g2".to_string(), "g4".to_string()];
    let options = FitOptions::default();
    let accuracy = accuracy_study(
        &graphs,
        &[2500, 10000],
        &[GridSpec::Named("s1".into()), GridSpec::Named("s2".into())],
        TruthDraw::Shared,
        10,
        1,
        Path::new("."),
        &options,
    )?;
    print!("{}", accuracy.to_text());
    println!();
    let lrt = lrt_study(&graphs[..1], &[5000], &[0.0, 0.1, 0.3], &GridSpec::Named("s2".into()), 0.05, 100, 1, Path::new("."), &options)?;
    print!("{}", lrt.to_text());
    Ok(())
}
