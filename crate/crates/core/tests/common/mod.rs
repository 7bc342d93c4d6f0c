#![allow(dead_code)]

use covgm::ising::{BinaryDataset, DynamicIsingStructure, IsingParameters};
use covgm::loglinear::{log_likelihood, GeneratingClass, LevelSpace, ModelSpec, ObservationSet, ParameterSet};
use covgm::experiment::sample_loglinear;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random hierarchical model with `1..=max_p` vertices (2 or 3 levels) and
/// `0..=max_h` covariates; slot classes are closures of 1 to 3 random sets.
pub fn random_spec(rng: &mut ChaCha8Rng, max_p: usize, max_h: usize) -> ModelSpec {
    let p = rng.random_range(1..=max_p);
    let h = rng.random_range(0..=max_h);
    let levels: Vec<usize> = (0..p).map(|_| if rng.random_bool(0.25) { 3 } else { 2 }).collect();
    let classes = (0..=h)
        .map(|_| {
            let count = rng.random_range(1..=3);
            let sets: Vec<Vec<usize>> = (0..count)
                .map(|_| {
                    let mut set: Vec<usize> = (0..p).filter(|_| rng.random_bool(0.5)).collect();
                    if set.is_empty() {
                        set.push(rng.random_range(0..p));
                    }
                    set
                })
                .collect();
            GeneratingClass::from_maximal(sets).unwrap()
        })
        .collect();
    ModelSpec::new(LevelSpace::new(levels).unwrap(), classes).unwrap()
}

pub fn random_theta(spec: &ModelSpec, scale: f64, rng: &mut ChaCha8Rng) -> ParameterSet {
    let flat: Vec<f64> = (0..spec.dimension())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterSet::from_flat(spec, &flat).unwrap()
}

pub fn uniform_covariates(h: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..h).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn simulate(spec: &ModelSpec, theta: &ParameterSet, n: usize, rng: &mut ChaCha8Rng) -> ObservationSet {
    let covariates = uniform_covariates(spec.covariate_count(), n, rng);
    sample_loglinear(spec, theta, &covariates, rng).unwrap()
}

pub fn loglik_at(spec: &ModelSpec, flat: &[f64], data: &ObservationSet) -> f64 {
    log_likelihood(spec, &ParameterSet::from_flat(spec, flat).unwrap(), data).unwrap()
}

/// `max |a - b| / max(1, max |b|)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Unnormalized log-weight of a binary configuration under the dynamic
/// Ising model, computed term by term.
pub fn ising_log_weight(structure: &DynamicIsingStructure, params: &IsingParameters, y: &[u8], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for h in 0..structure.slot_count() {
        let power = if h == 0 { 1.0 } else { x[h - 1] };
        let mut slot = 0.0;
        for (v, &yv) in y.iter().enumerate() {
            if yv == 1 {
                slot += params.main_effect(v, h);
            }
        }
        for &(u, v) in structure.edges(h) {
            if y[u] == 1 && y[v] == 1 {
                slot += params.interaction(h, u, v).unwrap();
            }
        }
        total += power * slot;
    }
    total
}

/// Joint probabilities of all `2^p` configurations (bit `p-1-v` of the
/// index is `y_v`).
pub fn ising_joint(structure: &DynamicIsingStructure, params: &IsingParameters, x: &[f64]) -> Vec<f64> {
    let p = structure.vertex_count();
    let weights: Vec<f64> = (0..1usize << p)
        .map(|k| ising_log_weight(structure, params, &configuration(k, p), x))
        .collect();
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    unnormalized.iter().map(|w| w / total).collect()
}

pub fn configuration(k: usize, p: usize) -> Vec<u8> {
    (0..p).map(|v| ((k >> (p - 1 - v)) & 1) as u8).collect()
}

pub fn configuration_index(y: &[u8]) -> usize {
    y.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

pub fn random_ising(rng: &mut ChaCha8Rng, p: usize, h: usize, edge_prob: f64) -> (DynamicIsingStructure, IsingParameters) {
    let slots: Vec<Vec<(usize, usize)>> = (0..=h)
        .map(|_| {
            (0..p)
                .flat_map(|u| (u + 1..p).map(move |v| (u, v)))
                .filter(|_| rng.random_bool(edge_prob))
                .collect()
        })
        .collect();
    let structure = DynamicIsingStructure::new(p, slots).unwrap();
    let params = IsingParameters::standard_normal(&structure, rng);
    (structure, params)
}

pub fn constant_rows(x: &[f64], n: usize) -> Vec<Vec<f64>> {
    vec![x.to_vec(); n]
}

pub fn empty_dataset_like(data: &BinaryDataset) -> BinaryDataset {
    BinaryDataset::new(data.vertex_count(), data.covariate_count())
}

pub mod cli {
    use std::collections::BTreeMap;
    use std::fs;
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    pub fn covgm(args: &[&str], cwd: &Path) -> Output {
        Command::new(env!("CARGO_BIN_EXE_covgm"))
            .args(args)
            .current_dir(cwd)
            .output()
            .expect("binary runs")
    }

    pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    /// Configurations for every task; later tasks consume earlier outputs.
    pub const PIPELINE: &[(&str, &str, &str)] = &[
        (
            "simulate",
            "sim_loglinear.json",
            r#"{"task":"simulate","seed":5,"out":"loglinear",
                "model":{"form":"loglinear","levels":[2,2],"slots":[[[1,2]],[[1,2]]],"parameters":[[0.4,-0.3,0.8],[0.2,0.5,-0.6]]},
                "simulate":{"n":3000,"grid":"s2"}}"#,
        ),
        (
            "fit-mle",
            "fit_mle.json",
            r#"{"task":"fit-mle","out":"mle","data":"loglinear/data.csv",
                "model":{"form":"loglinear","levels":[2,2],"slots":[[[1,2]],[[1,2]]]}}"#,
        ),
        (
            "test-lrt",
            "test_lrt.json",
            r#"{"task":"test-lrt","out":"lrt","data":"loglinear/data.csv",
                "model":{"form":"loglinear","levels":[2,2],"slots":[[[1,2]],[[1,2]]]}}"#,
        ),
        (
            "simulate",
            "sim_ising.json",
            r#"{"task":"simulate","seed":6,"out":"ising",
                "model":{"form":"ising","vertices":4,"slots":[[[1,2],[2,3]],[[3,4]]],
                         "main":[[0.1,-0.2],[0.3,0.4],[-0.5,0.6],[0.2,0.1]],"weights":[[1.0,-0.8],[1.2]]},
                "simulate":{"n":4000,"grid":"s2","layout":"cyclic","burn_in":200}}"#,
        ),
        (
            "fit-pseudo",
            "fit_pseudo.json",
            r#"{"task":"fit-pseudo","out":"pseudo","data":"ising/data.csv",
                "model":{"form":"ising","vertices":4,"slots":[[[1,2],[2,3]],[[3,4]]]}}"#,
        ),
        (
            "select",
            "select.json",
            r#"{"task":"select","seed":7,"out":"select","data":"ising/data.csv","truth":"pseudo/edges.csv",
                "select":{"iterations":1500}}"#,
        ),
        (
            "evaluate",
            "compare.json",
            r#"{"task":"evaluate","out":"compare",
                "study":{"kind":"compare","truth":"pseudo/edges.csv","estimate":"select/edges_and.csv","vertices":4,"covariates":1}}"#,
        ),
        (
            "evaluate",
            "accuracy.json",
            r#"{"task":"evaluate","seed":8,"replications":3,"out":"accuracy",
                "study":{"kind":"accuracy","graphs":["g2"],"sizes":[2000],"grids":["s1"]}}"#,
        ),
        (
            "evaluate",
            "rmse.json",
            r#"{"task":"evaluate","seed":9,"replications":2,"out":"rmse",
                "study":{"kind":"rmse","vertices":5,"edges":[3,2],"sizes":[500,1000],"burn_in":100}}"#,
        ),
    ];

    /// Runs the whole pipeline inside `dir`; returns each failing step.
    pub fn run_pipeline(dir: &Path) -> Vec<String> {
        let mut failures = Vec::new();
        for (task, name, config) in PIPELINE {
            write(dir, name, config);
            let output = covgm(&[task, "--config", name], dir);
            if !output.status.success() {
                failures.push(format!("{task} {name}: {}", String::from_utf8_lossy(&output.stderr).trim()));
            }
        }
        failures
    }

    /// Every file under `root` (relative path to contents), skipping configs.
    pub fn outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        let mut files = BTreeMap::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.parent() != Some(root) {
                    files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
                }
            }
        }
        files
    }
}
