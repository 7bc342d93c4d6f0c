//! Experiment orchestration: configuration, simulation studies, and the
//! task runner behind the command-line tool.
//!
//! Every random quantity is drawn from a stream derived from the root seed
//! (see [`crate::seed`]), so a task with a fixed configuration writes the
//! same bytes on every run regardless of the thread count.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;

use crate::bdmcmc::{self, CombineRule, Criterion, SelectOptions, SelectionResult};
use crate::error::{Error, Result};
use crate::inference::{self, TestResult};
use crate::io::{self, EdgeList, ModelFile};
use crate::ising::{self, BinaryDataset, DynamicIsingStructure, GibbsOptions, IsingParameters, PseudoFitOptions};
use crate::loglinear::{cell_probabilities, GeneratingClass, LevelSpace, ModelSpec, ObservationSet, ParameterSet};
use crate::mle::{self, FitOptions};
use crate::seed;

const ACCURACY_STREAM: u64 = 1;
const LRT_STREAM: u64 = 2;
const RMSE_STREAM: u64 = 3;
const F1_STREAM: u64 = 4;
const SIMULATE_STREAM: u64 = 5;

/// `{0.1, 0.2, 0.3, 0.4, 0.5}`.
pub fn grid_s1() -> Vec<f64> {
    (1..=5).map(|k| k as f64 / 10.0).collect()
}

/// `{0.05, 0.10, ..., 0.95, 0.99}`: twenty values.
pub fn grid_s2() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).chain([0.99]).collect()
}

/// Named grid (`"s1"`, `"s2"`) or explicit values.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Named(String),
    Values(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            GridSpec::Named(name) => match name.to_ascii_lowercase().as_str() {
                "s1" => grid_s1(),
                "s2" => grid_s2(),
                other => return Err(Error::Validation(format!("unknown covariate grid '{other}'"))),
            },
            GridSpec::Values(values) => values.clone(),
        };
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariate grid must be a nonempty list of finite values".into()));
        }
        Ok(values)
    }

    pub fn label(&self) -> String {
        match self {
            GridSpec::Named(name) => name.to_ascii_uppercase(),
            GridSpec::Values(values) => format!("{} values", values.len()),
        }
    }
}

/// `n` covariate values in equal contiguous blocks over the sorted grid;
/// the first `n mod |S|` values get one extra observation.
pub fn block_covariates(grid: &[f64], n: usize) -> Vec<f64> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q, r) = (n / sorted.len(), n % sorted.len());
    sorted
        .iter()
        .enumerate()
        .flat_map(|(i, &x)| std::iter::repeat_n(x, q + usize::from(i < r)))
        .collect()
}

/// Row `m` gets `grid[m mod |S|]`, so every prefix is near-balanced.
pub fn cyclic_covariates(grid: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|m| grid[m % grid.len()]).collect()
}

/// Draws one cell per covariate row from the model's cell probabilities.
pub fn sample_loglinear(
    spec: &ModelSpec,
    theta: &ParameterSet,
    covariates: &[Vec<f64>],
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    let space = spec.level_space().clone();
    let mut samplers: HashMap<Vec<u64>, WeightedIndex<f64>> = HashMap::new();
    let mut rows = Vec::with_capacity(covariates.len());
    for x in covariates {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if !samplers.contains_key(&key) {
            let probabilities = cell_probabilities(spec, theta, x)?;
            let sampler = WeightedIndex::new(&probabilities)
                .map_err(|e| Error::Numerical(format!("cannot sample cells: {e}")))?;
            samplers.insert(key.clone(), sampler);
        }
        let index = samplers[&key].sample(rng);
        rows.push((space.cell_at(index), x.clone()));
    }
    ObservationSet::from_rows(space, spec.covariate_count(), rows)
}

/// Named study graphs on vertices `a, b, c, d`.
///
/// * `g2`: edge `ab` in both slots.
/// * `g4`: maximal sets `acd` and `ab` in both slots.
/// * `g2-mixed`: baseline `ab`, slope main effects only.
/// * `g4-mixed`: baseline `ab, cd`, slope `acd` plus `b`.
pub fn preset_spec(name: &str) -> Option<ModelSpec> {
    let (p, slots): (usize, [Vec<Vec<usize>>; 2]) = match name {
        "g2" => (2, [vec![vec![0, 1]], vec![vec![0, 1]]]),
        "g4" => (4, [vec![vec![0, 2, 3], vec![0, 1]], vec![vec![0, 2, 3], vec![0, 1]]]),
        "g2-mixed" => (2, [vec![vec![0, 1]], vec![vec![0], vec![1]]]),
        "g4-mixed" => (4, [vec![vec![0, 1], vec![2, 3]], vec![vec![0, 2, 3], vec![1]]]),
        _ => return None,
    };
    let classes = slots
        .into_iter()
        .map(GeneratingClass::from_maximal)
        .collect::<Result<Vec<_>>>()
        .ok()?;
    ModelSpec::new(LevelSpace::binary(p).ok()?, classes).ok()
}

/// Uniformly random edge sets with the given size per slot.
pub fn random_structure(vertex_count: usize, edges_per_slot: &[usize], rng: &mut impl Rng) -> Result<DynamicIsingStructure> {
    let pairs: Vec<(usize, usize)> = (0..vertex_count)
        .flat_map(|u| (u + 1..vertex_count).map(move |v| (u, v)))
        .collect();
    let mut slots = Vec::with_capacity(edges_per_slot.len());
    for (h, &count) in edges_per_slot.iter().enumerate() {
        if count > pairs.len() {
            return Err(Error::Validation(format!(
                "slot {h}: {count} edges requested, only {} pairs exist",
                pairs.len()
            )));
        }
        let chosen = rand::seq::index::sample(rng, pairs.len(), count);
        let mut edges: Vec<(usize, usize)> = chosen.iter().map(|k| pairs[k]).collect();
        edges.sort_unstable();
        slots.push(edges);
    }
    DynamicIsingStructure::new(vertex_count, slots)
}

/// Main effects `main_scale * N(0,1)`; interactions `sign * (edge_floor + |N(0,1)|)`.
pub fn random_ising_parameters(
    structure: &DynamicIsingStructure,
    main_scale: f64,
    edge_floor: f64,
    rng: &mut impl Rng,
) -> IsingParameters {
    let mut params = IsingParameters::zeros(structure);
    for v in 0..structure.vertex_count() {
        for h in 0..structure.slot_count() {
            let z: f64 = rng.sample(StandardNormal);
            params.set_main_effect(v, h, main_scale * z);
        }
    }
    for h in 0..structure.slot_count() {
        for &(u, v) in structure.edges(h) {
            let z: f64 = rng.sample(StandardNormal);
            params.set_interaction(h, u, v, z.signum() * (edge_floor + z.abs()));
        }
    }
    params
}

/// One report cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<u64> for Field {
    fn from(v: u64) -> Self {
        Field::Int(v as i64)
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Float(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}

impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Text(v.to_string())
    }
}

/// Four significant digits, switching to exponent form for very large or
/// small magnitudes.
pub fn format_significant(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..6).contains(&magnitude) {
        let decimals = (3 - magnitude).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.3e}")
    }
}

impl Field {
    fn human(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) => format_significant(*v),
            Field::Text(v) => v.clone(),
        }
    }

    fn machine(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Float(v) => v.to_string(),
            Field::Text(v) => v.clone(),
        }
    }
}

/// A table with a title and free-form notes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub title: String,
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Report {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            title: title.into(),
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// Column `name` of every row.
    pub fn column(&self, name: &str) -> Option<Vec<&Field>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[k]).collect())
    }

    /// Aligned text table with 4 significant digits.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Field::human).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([self.columns[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out);
        let line = |values: &[String]| -> String {
            values
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(&self.columns));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for row in &cells {
            let _ = writeln!(out, "{}", line(row));
        }
        if !self.notes.is_empty() {
            let _ = writeln!(out);
            for note in &self.notes {
                let _ = writeln!(out, "note: {note}");
            }
        }
        out
    }

    /// CSV at full precision (shortest round-trip formatting).
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Numerical(format!("cannot format report: {e}"));
        writer.write_record(&self.columns).map_err(fail)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(Field::machine)).map_err(fail)?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Numerical(format!("cannot format report: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
    }
}

/// Writes `<stem>.txt` and `<stem>.csv`.
pub fn emit_report(report: &Report, stem: &Path) -> Result<()> {
    io::write_text(&stem.with_extension("txt"), &report.to_text())?;
    io::write_text(&stem.with_extension("csv"), &report.to_csv()?)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    }
}

/// A log-linear study graph: preset name or path to a specification file.
fn resolve_graph(name: &str, base: &Path) -> Result<ModelSpec> {
    if let Some(spec) = preset_spec(name) {
        return Ok(spec);
    }
    match io::read_model_spec(&base.join(name))? {
        ModelFile::Loglinear { spec, .. } => Ok(spec),
        ModelFile::Ising { structure, .. } => structure.to_model_spec(),
    }
}

/// Setting of the parameter-accuracy study.
#[derive(Debug, Clone)]
pub struct AccuracySetting {
    pub graph: String,
    pub spec: ModelSpec,
    pub n: usize,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub mean: f64,
    pub standard_error: f64,
    pub successes: usize,
    pub failures: usize,
}

/// How true parameters are drawn in the accuracy study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthDraw {
    /// One `θ* ~ N(0, I)` per graph, reused by every replication and setting.
    #[default]
    Shared,
    /// A fresh `θ*` for every replication.
    PerReplication,
}

/// `θ* ~ N(0, I)` shared by every setting of graph number `graph`.
pub fn shared_truth(spec: &ModelSpec, root: u64, graph: u64) -> Vec<f64> {
    let mut rng = seed::stream(root, &[ACCURACY_STREAM, u64::MAX, graph]);
    (0..spec.dimension()).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean over replications of `||θ* − θ̂||₂ / d` with covariates in equal
/// blocks over the grid. `shared` fixes `θ*`; otherwise each replication
/// draws its own from `N(0, I)`.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_replications(
    spec: &ModelSpec,
    n: usize,
    grid: &[f64],
    shared: Option<&[f64]>,
    replications: usize,
    root: u64,
    setting: u64,
    options: &FitOptions,
) -> Result<AccuracyRow> {
    if spec.covariate_count() != 1 {
        return Err(Error::Validation("the accuracy study uses exactly one covariate".into()));
    }
    if shared.is_some_and(|t| t.len() != spec.dimension()) {
        return Err(Error::Dimension("shared truth does not match the model dimension".into()));
    }
    let covariates: Vec<Vec<f64>> = block_covariates(grid, n).into_iter().map(|x| vec![x]).collect();
    let d = spec.dimension();
    let errors: Vec<Option<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<Option<f64>> {
            let mut rng = seed::stream(root, &[ACCURACY_STREAM, setting, r as u64]);
            let truth: Vec<f64> = match shared {
                Some(t) => t.to_vec(),
                None => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            };
            let theta = ParameterSet::from_flat(spec, &truth)?;
            let data = sample_loglinear(spec, &theta, &covariates, &mut rng)?;
            match mle::newton_fit(spec, &data, options) {
                Ok(fit) if fit.converged => {
                    let estimate = fit.theta.flat();
                    let norm = estimate.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    Ok(Some(norm / d as f64))
                }
                Ok(_) => Ok(None),
                Err(e) if e.kind() == crate::ErrorKind::Numerical => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = errors.iter().flatten().copied().collect();
    let (mean, standard_error) = mean_and_se(&values);
    Ok(AccuracyRow {
        mean,
        standard_error,
        successes: values.len(),
        failures: replications - values.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtRow {
    pub rejection_rate: f64,
    pub standard_error: f64,
    pub mean_statistic: f64,
    pub degrees_of_freedom: usize,
    pub successes: usize,
    pub failures: usize,
}

/// Spec with the slope classes of `slots` emptied.
pub fn drop_slots(spec: &ModelSpec, slots: &[usize]) -> Result<ModelSpec> {
    let classes = spec
        .classes()
        .iter()
        .enumerate()
        .map(|(h, c)| if slots.contains(&h) { GeneratingClass::empty() } else { c.clone() })
        .collect();
    ModelSpec::new(spec.level_space().clone(), classes)
}

/// Rejection rate of the LRT of `θ_1 = 0` at `level`. Baseline parameters
/// are `N(0,1)` per replication, every slope parameter equals `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn lrt_replications(
    spec: &ModelSpec,
    n: usize,
    grid: &[f64],
    gamma: f64,
    level: f64,
    replications: usize,
    root: u64,
    setting: u64,
    options: &FitOptions,
) -> Result<LrtRow> {
    if spec.covariate_count() != 1 {
        return Err(Error::Validation("the LRT study uses exactly one covariate".into()));
    }
    let null = drop_slots(spec, &[1])?;
    let covariates: Vec<Vec<f64>> = block_covariates(grid, n).into_iter().map(|x| vec![x]).collect();
    let outcomes: Vec<Option<f64>> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<Option<f64>> {
            let mut rng = seed::stream(root, &[LRT_STREAM, setting, r as u64]);
            let baseline: Vec<f64> = (0..spec.index_set(0).len()).map(|_| rng.sample(StandardNormal)).collect();
            let slope = vec![gamma; spec.index_set(1).len()];
            let theta = ParameterSet::new(spec, vec![baseline, slope])?;
            let data = sample_loglinear(spec, &theta, &covariates, &mut rng)?;
            match inference::lrt(spec, &null, &data, options) {
                Ok(test) => Ok(Some(test.statistic)),
                Err(e) if e.kind() == crate::ErrorKind::Numerical => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let df = spec.dimension() - null.dimension();
    let statistics: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let rejections = statistics
        .iter()
        .filter(|&&s| inference::chi_square_upper_tail(s, df) < level)
        .count();
    let k = statistics.len() as f64;
    let rate = rejections as f64 / k;
    Ok(LrtRow {
        rejection_rate: rate,
        standard_error: (rate * (1.0 - rate) / k).sqrt(),
        mean_statistic: statistics.iter().sum::<f64>() / k,
        degrees_of_freedom: df,
        successes: statistics.len(),
        failures: replications - statistics.len(),
    })
}

/// Ground truth and simulated data for the pseudo-likelihood studies.
#[derive(Debug, Clone)]
pub struct PlantedIsing {
    pub structure: DynamicIsingStructure,
    pub parameters: IsingParameters,
    pub data: BinaryDataset,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedConfig {
    pub vertices: usize,
    /// Edges in the baseline and slope graph.
    pub edges: Vec<usize>,
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    #[serde(default = "one")]
    pub main_scale: f64,
    #[serde(default)]
    pub edge_floor: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_grid() -> GridSpec {
    GridSpec::Named("s2".into())
}

fn one() -> f64 {
    1.0
}

fn default_burn_in() -> usize {
    GibbsOptions::default().burn_in
}

/// Draws a random structure and parameters, then `n` Gibbs rows with
/// cyclic covariates; replication `r` uses streams under `(root, tag, r)`.
pub fn planted_ising(config: &PlantedConfig, n: usize, root: u64, tag: u64, r: u64) -> Result<PlantedIsing> {
    if config.edges.len() != 2 {
        return Err(Error::Validation("planted models have one covariate: give two edge counts".into()));
    }
    let mut rng = seed::stream(root, &[tag, r, 0]);
    let structure = random_structure(config.vertices, &config.edges, &mut rng)?;
    let parameters = random_ising_parameters(&structure, config.main_scale, config.edge_floor, &mut rng);
    let grid = config.grid.values()?;
    let covariates: Vec<Vec<f64>> = cyclic_covariates(&grid, n).into_iter().map(|x| vec![x]).collect();
    let options = GibbsOptions {
        burn_in: config.burn_in,
        thinning: 1,
    };
    let data = ising::gibbs_sample(&structure, &parameters, &covariates, options, seed::derive_seed(root, &[tag, r, 1]))?;
    Ok(PlantedIsing {
        structure,
        parameters,
        data,
    })
}

/// True-positive, false-positive and false-negative counts over all slots.
pub fn edge_counts(estimate: &[BTreeSet<(usize, usize)>], truth: &[BTreeSet<(usize, usize)>]) -> (usize, usize, usize) {
    let mut counts = (0, 0, 0);
    for (e, t) in estimate.iter().zip(truth) {
        counts.0 += e.intersection(t).count();
        counts.1 += e.difference(t).count();
        counts.2 += t.difference(e).count();
    }
    counts
}

/// F1 pooled over slots; 1 when both sides are empty.
pub fn pooled_f1(estimate: &[BTreeSet<(usize, usize)>], truth: &[BTreeSet<(usize, usize)>]) -> f64 {
    let (tp, fp, fn_) = edge_counts(estimate, truth);
    if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

fn truth_sets(structure: &DynamicIsingStructure) -> Vec<BTreeSet<(usize, usize)>> {
    (0..structure.slot_count()).map(|h| structure.edges(h).clone()).collect()
}

/// Where a model specification comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(serde_json::Value),
}

impl ModelSource {
    pub fn load(&self, base: &Path) -> Result<ModelFile> {
        match self {
            ModelSource::Path(path) => io::read_model_spec(&base.join(path)),
            ModelSource::Inline(value) => io::parse_model_spec(&value.to_string(), "model"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    FitMle,
    TestLrt,
    FitPseudo,
    Select,
    Evaluate,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::FitMle => "fit-mle",
            Task::TestLrt => "test-lrt",
            Task::FitPseudo => "fit-pseudo",
            Task::Select => "select",
            Task::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Blocks,
    Cyclic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    /// Grid for the single covariate; omitted for covariate-free models.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub thinning: usize,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_halving")]
    pub step_halving_limit: usize,
}

fn default_max_iterations() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_halving() -> usize {
    30
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_tolerance(),
            step_halving_limit: default_halving(),
        }
    }
}

impl FitConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_halving_limit: self.step_halving_limit,
            initial: None,
        }
    }

    pub fn pseudo_options(&self) -> PseudoFitOptions {
        PseudoFitOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            step_halving_limit: self.step_halving_limit,
            ..PseudoFitOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionName {
    #[default]
    Bic,
    Ebic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    #[serde(default)]
    pub criterion: CriterionName,
    #[serde(default)]
    pub omega: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_iterations() -> usize {
    5000
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            criterion: CriterionName::Bic,
            omega: 0.0,
            iterations: default_iterations(),
            burn_in: None,
            threshold: default_threshold(),
        }
    }
}

impl SelectConfig {
    pub fn options(&self, seed: u64) -> SelectOptions {
        SelectOptions {
            criterion: match self.criterion {
                CriterionName::Bic => Criterion::Bic,
                CriterionName::Ebic => Criterion::Ebic { omega: self.omega },
            },
            iterations: self.iterations,
            burn_in: self.burn_in,
            threshold: self.threshold,
            seed,
            fit: PseudoFitOptions::default(),
        }
    }
}

/// Simulation studies run by the `evaluate` task.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Study {
    /// Estimation accuracy of the exact MLE.
    Accuracy {
        graphs: Vec<String>,
        sizes: Vec<usize>,
        grids: Vec<GridSpec>,
        #[serde(default)]
        truth: TruthDraw,
    },
    /// Type I error and power of the likelihood-ratio test of the slope.
    Lrt {
        graphs: Vec<String>,
        sizes: Vec<usize>,
        gammas: Vec<f64>,
        #[serde(default = "default_grid")]
        grid: GridSpec,
        #[serde(default = "default_level")]
        level: f64,
    },
    /// Relative MSE of the pseudo-likelihood estimator against sample size.
    Rmse {
        #[serde(flatten)]
        planted: PlantedConfig,
        sizes: Vec<usize>,
    },
    /// F1 of neighborhood selection against sample size.
    F1 {
        #[serde(flatten)]
        planted: PlantedConfig,
        sizes: Vec<usize>,
    },
    /// F1 of an estimated edge list against a true one.
    Compare {
        truth: PathBuf,
        estimate: PathBuf,
        vertices: usize,
        covariates: usize,
    },
}

fn default_level() -> f64 {
    0.05
}

/// Configuration of one task, read from JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "one_usize")]
    pub replications: usize,
    #[serde(default)]
    pub model: Option<ModelSource>,
    /// Null model for `test-lrt`; defaults to dropping every slope.
    #[serde(default)]
    pub null_model: Option<ModelSource>,
    #[serde(default)]
    pub drop_slots: Option<Vec<usize>>,
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// True edge list to score `select` output against.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub select: SelectConfig,
    #[serde(default)]
    pub study: Option<Study>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        config.validate().map_err(|message| Error::parse(origin, message))?;
        Ok(config)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text, &path.display().to_string())?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.replications == 0 {
            return Err("replications: must be at least 1".into());
        }
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(format!("{field}: required by task '{}'", self.task.name()))
            }
        };
        match self.task {
            Task::Simulate => {
                need(self.model.is_some(), "model")?;
                need(self.simulate.is_some(), "simulate")
            }
            Task::FitMle | Task::TestLrt | Task::FitPseudo => {
                need(self.model.is_some(), "model")?;
                need(self.data.is_some(), "data")
            }
            Task::Select => need(self.data.is_some(), "data"),
            Task::Evaluate => need(self.study.is_some(), "study"),
        }
    }

    fn path(&self, relative: &Path) -> PathBuf {
        self.base_dir.join(relative)
    }

    fn model(&self) -> Result<ModelFile> {
        self.model.as_ref().expect("validated").load(&self.base_dir)
    }

    fn data_path(&self) -> PathBuf {
        self.path(self.data.as_ref().expect("validated"))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.clone().map(|o| self.path(&o)).unwrap_or_else(|| self.path(Path::new("out")))
    }
}

/// What a task produced.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub report: Report,
    pub files: Vec<PathBuf>,
}

/// Runs the configured task, writing its files under `out`.
pub fn run_task(config: &ExperimentConfig, out: &Path) -> Result<TaskOutcome> {
    let mut files = Vec::new();
    let result = match config.task {
        Task::Simulate => run_simulate(config, out, &mut files),
        Task::FitMle => run_fit_mle(config, out, &mut files),
        Task::TestLrt => run_test_lrt(config),
        Task::FitPseudo => run_fit_pseudo(config, out, &mut files),
        Task::Select => run_select_task(config, out, &mut files),
        Task::Evaluate => run_evaluate(config, out, &mut files),
    };
    let (report, deferred) = match result {
        Ok(report) => (report, None),
        Err(TaskFailure::Hard(e)) => return Err(e),
        Err(TaskFailure::AfterReport(report, e)) => (*report, Some(e)),
    };
    let stem = out.join("report");
    emit_report(&report, &stem)?;
    files.push(stem.with_extension("txt"));
    files.push(stem.with_extension("csv"));
    match deferred {
        Some(e) => Err(e),
        None => Ok(TaskOutcome { report, files }),
    }
}

/// A task error, possibly after producing a report worth writing.
enum TaskFailure {
    Hard(Error),
    AfterReport(Box<Report>, Error),
}

impl From<Error> for TaskFailure {
    fn from(e: Error) -> Self {
        TaskFailure::Hard(e)
    }
}

type TaskResult = std::result::Result<Report, TaskFailure>;

fn simulation_covariates(grid: Option<&GridSpec>, layout: Layout, n: usize, h: usize) -> Result<Vec<Vec<f64>>> {
    match (h, grid) {
        (0, None) => Ok(vec![Vec::new(); n]),
        (0, Some(_)) => Err(Error::Validation("simulate.grid: the model has no covariates".into())),
        (1, Some(grid)) => {
            let values = grid.values()?;
            let xs = match layout {
                Layout::Blocks => block_covariates(&values, n),
                Layout::Cyclic => cyclic_covariates(&values, n),
            };
            Ok(xs.into_iter().map(|x| vec![x]).collect())
        }
        (1, None) => Err(Error::Validation("simulate.grid: required for a model with one covariate".into())),
        _ => Err(Error::Validation("simulate: grid-driven simulation supports at most one covariate".into())),
    }
}

fn run_simulate(config: &ExperimentConfig, out: &Path, files: &mut Vec<PathBuf>) -> TaskResult {
    let sim = config.simulate.as_ref().expect("validated");
    let data_path = out.join("data.csv");
    let mut report = Report::new("simulated dataset", &["quantity", "value"]);
    match config.model()? {
        ModelFile::Loglinear { spec, parameters } => {
            let theta = parameters.ok_or_else(|| Error::Validation("model: parameters are required to simulate".into()))?;
            let covariates = simulation_covariates(sim.grid.as_ref(), sim.layout, sim.n, spec.covariate_count())?;
            let mut rng = seed::stream(config.seed, &[SIMULATE_STREAM]);
            let data = sample_loglinear(&spec, &theta, &covariates, &mut rng)?;
            io::write_observations(&data_path, &data)?;
            report.push(vec!["form".into(), "loglinear".into()]);
        }
        ModelFile::Ising { structure, parameters } => {
            let params = parameters.ok_or_else(|| Error::Validation("model: parameters are required to simulate".into()))?;
            let covariates = simulation_covariates(sim.grid.as_ref(), sim.layout, sim.n, structure.covariate_count())?;
            let options = GibbsOptions {
                burn_in: sim.burn_in,
                thinning: sim.thinning,
            };
            let data = ising::gibbs_sample(&structure, &params, &covariates, options, seed::derive_seed(config.seed, &[SIMULATE_STREAM]))?;
            io::write_binary(&data_path, &data)?;
            report.push(vec!["form".into(), "ising".into()]);
        }
    }
    report.push(vec!["rows".into(), sim.n.into()]);
    report.push(vec!["seed".into(), config.seed.into()]);
    files.push(data_path);
    Ok(report)
}

fn loglinear_model(config: &ExperimentConfig) -> Result<ModelSpec> {
    match config.model()? {
        ModelFile::Loglinear { spec, .. } => Ok(spec),
        ModelFile::Ising { structure, .. } => structure.to_model_spec(),
    }
}

fn run_fit_mle(config: &ExperimentConfig, out: &Path, files: &mut Vec<PathBuf>) -> TaskResult {
    let spec = loglinear_model(config)?;
    let data = io::read_observations(&config.data_path(), spec.level_space())?;
    let fit = mle::newton_fit(&spec, &data, &config.fit.fit_options())?;
    let errors = if fit.converged {
        inference::standard_errors(&fit).unwrap_or_else(|_| vec![f64::NAN; spec.dimension()])
    } else {
        vec![f64::NAN; spec.dimension()]
    };
    let mut report = Report::new("maximum likelihood fit", &["index", "parameter", "estimate", "std_error"]);
    for (k, (estimate, se)) in fit.theta.flat().iter().zip(&errors).enumerate() {
        report.push(vec![k.into(), spec.parameter_label(k).into(), (*estimate).into(), (*se).into()]);
    }
    report.note(format!("log-likelihood {}", format_significant(fit.log_likelihood)));
    report.note(format!("iterations {}, converged {}", fit.iterations, fit.converged));
    for w in &fit.warnings {
        report.note(w.clone());
    }
    let estimates = ModelFile::Loglinear {
        spec: spec.clone(),
        parameters: Some(fit.theta.clone()),
    };
    let model_path = out.join("estimates.json");
    io::write_model_spec(&model_path, &estimates)?;
    files.push(model_path);
    if !fit.converged {
        let e = Error::NotConverged {
            iterations: fit.iterations,
            score_norm: fit.score_norm,
            detail: "maximum likelihood fit".into(),
        };
        return Err(TaskFailure::AfterReport(Box::new(report), e));
    }
    Ok(report)
}

fn test_row(report: &mut Report, name: &str, test: &TestResult, level: f64) {
    report.push(vec![
        name.into(),
        test.null.clone().into(),
        test.statistic.into(),
        test.degrees_of_freedom.into(),
        test.p_value.into(),
        test.rejects_at(level).into(),
    ]);
}

fn run_test_lrt(config: &ExperimentConfig) -> TaskResult {
    let full = loglinear_model(config)?;
    let null = match &config.null_model {
        Some(source) => match source.load(&config.base_dir)? {
            ModelFile::Loglinear { spec, .. } => spec,
            ModelFile::Ising { structure, .. } => structure.to_model_spec()?,
        },
        None => {
            let slots: Vec<usize> = config.drop_slots.clone().unwrap_or_else(|| (1..full.slot_count()).collect());
            drop_slots(&full, &slots)?
        }
    };
    let level = config.level.unwrap_or(0.05);
    let data = io::read_observations(&config.data_path(), full.level_space())?;
    let options = config.fit.fit_options();
    let test = inference::lrt(&full, &null, &data, &options)?;
    let mut report = Report::new("hypothesis tests", &["test", "null", "statistic", "df", "p_value", "reject"]);
    test_row(&mut report, "likelihood ratio", &test, level);
    let fit = mle::newton_fit(&full, &data, &options)?;
    for h in 1..full.slot_count() {
        if null.class(h).is_empty() && !full.class(h).is_empty() {
            if let Ok(wald) = inference::wald_test_slot(&full, &fit, h) {
                test_row(&mut report, "wald", &wald, level);
            }
        }
    }
    for w in &test.warnings {
        report.note(w.clone());
    }
    report.note(format!("level {level}"));
    Ok(report)
}

fn ising_structure(config: &ExperimentConfig) -> Result<DynamicIsingStructure> {
    match config.model()? {
        ModelFile::Ising { structure, .. } => Ok(structure),
        ModelFile::Loglinear { .. } => Err(Error::Validation("model: fit-pseudo needs an Ising model".into())),
    }
}

fn run_fit_pseudo(config: &ExperimentConfig, out: &Path, files: &mut Vec<PathBuf>) -> TaskResult {
    let structure = ising_structure(config)?;
    let data = io::read_binary(&config.data_path())?;
    let fit = ising::fit_pseudo(&structure, &data, &config.fit.pseudo_options())?;
    let mut report = Report::new(
        "pseudo-likelihood fit",
        &["vertex", "log_likelihood", "iterations", "converged", "separation", "rank_deficient"],
    );
    for f in &fit.vertex_fits {
        report.push(vec![
            (f.vertex + 1).into(),
            f.log_likelihood.into(),
            f.iterations.into(),
            f.converged.into(),
            f.separation.into(),
            f.rank_deficient.into(),
        ]);
    }
    let flagged = fit.flagged_vertices();
    if !flagged.is_empty() {
        report.note(format!(
            "flagged vertices: {}",
            flagged.iter().map(|v| (v + 1).to_string()).collect::<Vec<_>>().join(" ")
        ));
    }
    let model_path = out.join("estimates.json");
    io::write_model_spec(
        &model_path,
        &ModelFile::Ising {
            structure: structure.clone(),
            parameters: Some(fit.parameters.clone()),
        },
    )?;
    let edges_path = out.join("edges.csv");
    io::write_edge_list(&edges_path, &EdgeList::from_structure(&structure, Some(&fit.parameters)))?;
    files.push(model_path);
    files.push(edges_path);
    Ok(report)
}

/// Writes both edge lists and the probability table of a selection.
pub fn write_selection(result: &SelectionResult, out: &Path) -> Result<Vec<PathBuf>> {
    let and_path = out.join("edges_and.csv");
    let or_path = out.join("edges_or.csv");
    io::write_edge_list(&and_path, &EdgeList::from_slot_sets(&result.and_edges))?;
    io::write_edge_list(&or_path, &EdgeList::from_slot_sets(&result.or_edges))?;
    let mut table = Report::new("inclusion probabilities", &["vertex", "neighbor", "slot", "probability"]);
    for (v, map) in result.probabilities.iter().enumerate() {
        for (&(u, h), &p) in map {
            table.push(vec![(v + 1).into(), (u + 1).into(), h.into(), p.into()]);
        }
    }
    let prob_path = out.join("probabilities.csv");
    io::write_text(&prob_path, &table.to_csv()?)?;
    Ok(vec![and_path, or_path, prob_path])
}

/// Selection on a dataset; both rules written to `out`.
pub fn run_selection(data: &BinaryDataset, options: &SelectOptions, out: &Path) -> Result<(SelectionResult, Vec<PathBuf>)> {
    let result = bdmcmc::select(data, options)?;
    let files = write_selection(&result, out)?;
    Ok((result, files))
}

fn run_select_task(config: &ExperimentConfig, out: &Path, files: &mut Vec<PathBuf>) -> TaskResult {
    let data = io::read_binary(&config.data_path())?;
    let options = config.select.options(config.seed);
    let (result, written) = run_selection(&data, &options, out)?;
    files.extend(written);
    let truth = match &config.truth {
        Some(path) => Some(io::read_edge_list(&config.path(path))?.to_structure(data.vertex_count(), data.covariate_count())?),
        None => None,
    };
    let mut report = Report::new("neighborhood selection", &["slot", "rule", "edges", "f1"]);
    for h in 0..result.slot_count {
        for rule in [CombineRule::And, CombineRule::Or] {
            let edges = result.edges(rule, h);
            let f1 = truth.as_ref().map_or(f64::NAN, |t| bdmcmc::f1_score(edges, t.edges(h)));
            report.push(vec![h.into(), rule.to_string().into(), edges.len().into(), f1.into()]);
        }
    }
    report.note(format!(
        "criterion {}, {} jumps per vertex, burn-in {}, threshold {}",
        options.criterion,
        options.iterations,
        options.burn_in_jumps(),
        options.threshold
    ));
    if !result.flagged_vertices.is_empty() {
        report.note(format!(
            "vertices with flagged fits: {}",
            result.flagged_vertices.iter().map(|v| (v + 1).to_string()).collect::<Vec<_>>().join(" ")
        ));
    }
    Ok(report)
}

/// Accuracy study table: one row per (graph, n, grid).
#[allow(clippy::too_many_arguments)]
pub fn accuracy_study(
    graphs: &[String],
    sizes: &[usize],
    grids: &[GridSpec],
    truth: TruthDraw,
    replications: usize,
    root: u64,
    base: &Path,
    options: &FitOptions,
) -> Result<Report> {
    let mut report = Report::new(
        "estimation accuracy: mean ||theta* - theta_hat||_2 / dimension",
        &["graph", "n", "grid", "dimension", "mean", "std_error", "fits", "failures"],
    );
    let mut setting = 0u64;
    for (g, graph) in graphs.iter().enumerate() {
        let spec = resolve_graph(graph, base)?;
        let shared = (truth == TruthDraw::Shared).then(|| shared_truth(&spec, root, g as u64));
        for &n in sizes {
            for grid in grids {
                let values = grid.values()?;
                if n % values.len() != 0 {
                    report.note(format!(
                        "{graph}, n={n}, {}: {} leftover rows assigned to the smallest grid values",
                        grid.label(),
                        n % values.len()
                    ));
                }
                let row = accuracy_replications(&spec, n, &values, shared.as_deref(), replications, root, setting, options)?;
                report.push(vec![
                    graph.as_str().into(),
                    n.into(),
                    grid.label().into(),
                    spec.dimension().into(),
                    row.mean.into(),
                    row.standard_error.into(),
                    row.successes.into(),
                    row.failures.into(),
                ]);
                setting += 1;
            }
        }
    }
    report.note(match truth {
        TruthDraw::Shared => "one true parameter vector per graph, shared by all replications",
        TruthDraw::PerReplication => "a fresh true parameter vector per replication",
    });
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
pub fn lrt_study(
    graphs: &[String],
    sizes: &[usize],
    gammas: &[f64],
    grid: &GridSpec,
    level: f64,
    replications: usize,
    root: u64,
    base: &Path,
    options: &FitOptions,
) -> Result<Report> {
    let mut report = Report::new(
        "likelihood-ratio test of the slope: rejection rates",
        &["graph", "n", "gamma", "df", "rejection_rate", "std_error", "mean_statistic", "tests", "failures"],
    );
    let values = grid.values()?;
    let mut setting = 0u64;
    for graph in graphs {
        let spec = resolve_graph(graph, base)?;
        for &n in sizes {
            for &gamma in gammas {
                let row = lrt_replications(&spec, n, &values, gamma, level, replications, root, setting, options)?;
                report.push(vec![
                    graph.as_str().into(),
                    n.into(),
                    gamma.into(),
                    row.degrees_of_freedom.into(),
                    row.rejection_rate.into(),
                    row.standard_error.into(),
                    row.mean_statistic.into(),
                    row.successes.into(),
                    row.failures.into(),
                ]);
                setting += 1;
            }
        }
    }
    report.note(format!("level {level}, grid {}", grid.label()));
    Ok(report)
}

/// Per-seed relative MSE of the pseudo-likelihood fit on nested prefixes
/// of one dataset per seed. Rows are `(seed, n, rmse)`.
pub fn rmse_series(planted: &PlantedConfig, sizes: &[usize], seeds: usize, root: u64) -> Result<Vec<(usize, usize, f64)>> {
    let n_max = sizes.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for r in 0..seeds {
        let truth = planted_ising(planted, n_max, root, RMSE_STREAM, r as u64)?;
        let target = truth.parameters.flat();
        for &n in sizes {
            let fit = ising::fit_pseudo(&truth.structure, &truth.data.prefix(n), &PseudoFitOptions::default())?;
            rows.push((r, n, ising::relative_mse(&fit.parameters.flat(), &target)?));
        }
    }
    Ok(rows)
}

/// F1 of the selected edges per seed, size, slot and rule, plus the value
/// pooled over slots (slot `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct F1Point {
    pub seed: usize,
    pub n: usize,
    pub slot: Option<usize>,
    pub rule: CombineRule,
    pub f1: f64,
}

pub fn f1_series(
    planted: &PlantedConfig,
    sizes: &[usize],
    seeds: usize,
    root: u64,
    select: &SelectConfig,
) -> Result<Vec<F1Point>> {
    let n_max = sizes.iter().copied().max().unwrap_or(0);
    let mut points = Vec::new();
    for r in 0..seeds {
        let truth = planted_ising(planted, n_max, root, F1_STREAM, r as u64)?;
        let true_sets = truth_sets(&truth.structure);
        for &n in sizes {
            let options = select.options(seed::derive_seed(root, &[F1_STREAM, r as u64, 2, n as u64]));
            let result = bdmcmc::select(&truth.data.prefix(n), &options)?;
            for rule in [CombineRule::And, CombineRule::Or] {
                let estimate: Vec<BTreeSet<(usize, usize)>> =
                    (0..result.slot_count).map(|h| result.edges(rule, h).clone()).collect();
                for h in 0..result.slot_count {
                    points.push(F1Point {
                        seed: r,
                        n,
                        slot: Some(h),
                        rule,
                        f1: bdmcmc::f1_score(&estimate[h], &true_sets[h]),
                    });
                }
                points.push(F1Point {
                    seed: r,
                    n,
                    slot: None,
                    rule,
                    f1: pooled_f1(&estimate, &true_sets),
                });
            }
        }
    }
    Ok(points)
}

fn slot_label(slot: Option<usize>) -> Field {
    match slot {
        Some(h) => h.into(),
        None => "all".into(),
    }
}

fn run_evaluate(config: &ExperimentConfig, out: &Path, files: &mut Vec<PathBuf>) -> TaskResult {
    let options = config.fit.fit_options();
    let base = &config.base_dir;
    let report = match config.study.as_ref().expect("validated") {
        Study::Accuracy {
            graphs,
            sizes,
            grids,
            truth,
        } => accuracy_study(graphs, sizes, grids, *truth, config.replications, config.seed, base, &options)?,
        Study::Lrt {
            graphs,
            sizes,
            gammas,
            grid,
            level,
        } => lrt_study(graphs, sizes, gammas, grid, *level, config.replications, config.seed, base, &options)?,
        Study::Rmse { planted, sizes } => {
            let rows = rmse_series(planted, sizes, config.replications, config.seed)?;
            let mut detail = Report::new("relative MSE per seed", &["seed", "n", "rmse"]);
            for &(r, n, v) in &rows {
                detail.push(vec![r.into(), n.into(), v.into()]);
            }
            let path = out.join("rmse_by_seed.csv");
            io::write_text(&path, &detail.to_csv()?)?;
            files.push(path);
            let mut report = Report::new("relative MSE of the pseudo-likelihood estimator", &["n", "rmse"]);
            for &n in sizes {
                let values: Vec<f64> = rows.iter().filter(|r| r.1 == n).map(|r| r.2).collect();
                report.push(vec![n.into(), (values.iter().sum::<f64>() / values.len() as f64).into()]);
            }
            report.note(format!("mean over {} seeds, {} vertices", config.replications, planted.vertices));
            report
        }
        Study::F1 { planted, sizes } => {
            let points = f1_series(planted, sizes, config.replications, config.seed, &config.select)?;
            let mut detail = Report::new("F1 per seed", &["seed", "n", "slot", "rule", "f1"]);
            for p in &points {
                detail.push(vec![p.seed.into(), p.n.into(), slot_label(p.slot), p.rule.to_string().into(), p.f1.into()]);
            }
            let path = out.join("f1_by_seed.csv");
            io::write_text(&path, &detail.to_csv()?)?;
            files.push(path);
            let mut report = Report::new("F1 of neighborhood selection (median over seeds)", &["n", "slot", "rule", "f1"]);
            for &n in sizes {
                for slot in (0..2).map(Some).chain([None]) {
                    for rule in [CombineRule::And, CombineRule::Or] {
                        let values: Vec<f64> = points
                            .iter()
                            .filter(|p| p.n == n && p.slot == slot && p.rule == rule)
                            .map(|p| p.f1)
                            .collect();
                        report.push(vec![n.into(), slot_label(slot), rule.to_string().into(), median(&values).into()]);
                    }
                }
            }
            report
        }
        Study::Compare {
            truth,
            estimate,
            vertices,
            covariates,
        } => {
            let truth = io::read_edge_list(&config.path(truth))?.to_structure(*vertices, *covariates)?;
            let estimate = io::read_edge_list(&config.path(estimate))?.to_structure(*vertices, *covariates)?;
            let (t, e) = (truth_sets(&truth), truth_sets(&estimate));
            let mut report = Report::new("edge recovery", &["slot", "true_positive", "false_positive", "false_negative", "f1"]);
            for h in 0..truth.slot_count() {
                let (tp, fp, fn_) = edge_counts(&e[h..=h], &t[h..=h]);
                report.push(vec![h.into(), tp.into(), fp.into(), fn_.into(), bdmcmc::f1_score(&e[h], &t[h]).into()]);
            }
            let (tp, fp, fn_) = edge_counts(&e, &t);
            report.push(vec!["all".into(), tp.into(), fp.into(), fn_.into(), pooled_f1(&e, &t).into()]);
            report
        }
    };
    Ok(report)
}
