//! Dynamic Ising model: representation, Gibbs simulation, and per-vertex
//! pseudo-likelihood estimation.
//!
//! For binary `y` and covariates `x` (with `x^0 = 1`),
//!
//! ```text
//! f(y | x) ∝ exp{ sum_h sum_v theta_{v,h} x^h y_v + sum_h sum_{(u,v) in E_h} theta_{uv,h} x^h y_u y_v }
//! ```
//!
//! and every conditional `p(y_v = 1 | y_rest, x)` is a logistic function of a
//! linear predictor, so each vertex is fitted as a logistic regression on the
//! design row `(x^h, x^h y_u for u in U_v^h)`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loglinear::{covariate_power, Cell, GeneratingClass, LevelSpace, ModelSpec, ObservationSet, ParameterSet};
use crate::mle::{is_rank_deficient, newton_step};
use crate::seed;

/// Coefficient magnitude treated as evidence of separation.
pub const SEPARATION_CAP: f64 = 30.0;

/// Vertex set with one edge set per covariate slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicIsingStructure {
    vertex_count: usize,
    edges: Vec<BTreeSet<(usize, usize)>>,
}

impl DynamicIsingStructure {
    /// `slots[h]` lists the edges of `E_h`; pairs are normalized to `u < v`.
    pub fn new(vertex_count: usize, slots: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::Validation("an Ising model needs at least one vertex".into()));
        }
        if slots.is_empty() {
            return Err(Error::Validation("at least the baseline edge set is required".into()));
        }
        let mut edges = Vec::with_capacity(slots.len());
        for (h, slot) in slots.into_iter().enumerate() {
            let mut set = BTreeSet::new();
            for (u, v) in slot {
                if u == v {
                    return Err(Error::Validation(format!("slot {h}: self-loop on vertex {u}")));
                }
                if u >= vertex_count || v >= vertex_count {
                    return Err(Error::Validation(format!(
                        "slot {h}: edge ({u},{v}) references a vertex outside 0..{vertex_count}"
                    )));
                }
                set.insert((u.min(v), u.max(v)));
            }
            edges.push(set);
        }
        Ok(Self {
            vertex_count,
            edges,
        })
    }

    pub fn empty(vertex_count: usize, covariate_count: usize) -> Result<Self> {
        Self::new(vertex_count, vec![Vec::new(); covariate_count + 1])
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn covariate_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn slot_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self, h: usize) -> &BTreeSet<(usize, usize)> {
        &self.edges[h]
    }

    pub fn has_edge(&self, h: usize, u: usize, v: usize) -> bool {
        self.edges[h].contains(&(u.min(v), u.max(v)))
    }

    /// `U_v^h`, ascending.
    pub fn neighbors(&self, v: usize, h: usize) -> Vec<usize> {
        self.edges[h]
            .iter()
            .filter_map(|&(a, b)| match (a == v, b == v) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }

    pub fn neighborhoods(&self, v: usize) -> Vec<Vec<usize>> {
        (0..self.slot_count()).map(|h| self.neighbors(v, h)).collect()
    }

    /// Edges of the combined graph `G = (V, ∪_h E_h)`.
    pub fn combined_edges(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().flatten().copied().collect()
    }

    /// The equivalent pairwise log-linear model on binary vertices.
    pub fn to_model_spec(&self) -> Result<ModelSpec> {
        let classes = self
            .edges
            .iter()
            .map(|slot| GeneratingClass::pairwise(self.vertex_count, slot.iter().copied()))
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(LevelSpace::binary(self.vertex_count)?, classes)
    }
}

/// Main effects `theta_{v,h}` and interactions `theta_{uv,h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingParameters {
    main: Vec<Vec<f64>>,
    interactions: Vec<BTreeMap<(usize, usize), f64>>,
}

impl IsingParameters {
    pub fn zeros(structure: &DynamicIsingStructure) -> Self {
        Self {
            main: vec![vec![0.0; structure.slot_count()]; structure.vertex_count()],
            interactions: structure
                .edges
                .iter()
                .map(|slot| slot.iter().map(|&e| (e, 0.0)).collect())
                .collect(),
        }
    }

    /// `main[v][h]` and `interactions[h][(u, v)]`; interactions must cover
    /// exactly the edges of the structure.
    pub fn new(
        structure: &DynamicIsingStructure,
        main: Vec<Vec<f64>>,
        interactions: Vec<BTreeMap<(usize, usize), f64>>,
    ) -> Result<Self> {
        if main.len() != structure.vertex_count()
            || main.iter().any(|row| row.len() != structure.slot_count())
        {
            return Err(Error::Dimension(format!(
                "main effects must be {} x {}",
                structure.vertex_count(),
                structure.slot_count()
            )));
        }
        if interactions.len() != structure.slot_count() {
            return Err(Error::Dimension("one interaction map per slot is required".into()));
        }
        for (h, slot) in interactions.iter().enumerate() {
            let keys: BTreeSet<(usize, usize)> = slot.keys().copied().collect();
            if &keys != structure.edges(h) {
                return Err(Error::Validation(format!(
                    "slot {h}: interaction parameters do not match the edge set"
                )));
            }
        }
        let params = Self { main, interactions };
        if params.main.iter().flatten().chain(params.interactions.iter().flat_map(|s| s.values())).any(|v| !v.is_finite()) {
            return Err(Error::Validation("Ising parameters must be finite".into()));
        }
        Ok(params)
    }

    /// Every parameter drawn independently from the standard normal.
    pub fn standard_normal(structure: &DynamicIsingStructure, rng: &mut impl Rng) -> Self {
        let mut params = Self::zeros(structure);
        for row in &mut params.main {
            for value in row {
                *value = rng.sample(StandardNormal);
            }
        }
        for slot in &mut params.interactions {
            for value in slot.values_mut() {
                *value = rng.sample(StandardNormal);
            }
        }
        params
    }

    pub fn main_effect(&self, v: usize, h: usize) -> f64 {
        self.main[v][h]
    }

    pub fn set_main_effect(&mut self, v: usize, h: usize, value: f64) {
        self.main[v][h] = value;
    }

    pub fn interaction(&self, h: usize, u: usize, v: usize) -> Option<f64> {
        self.interactions[h].get(&(u.min(v), u.max(v))).copied()
    }

    /// Overwrites an existing interaction; returns false when the edge is absent.
    pub fn set_interaction(&mut self, h: usize, u: usize, v: usize, value: f64) -> bool {
        match self.interactions[h].get_mut(&(u.min(v), u.max(v))) {
            Some(slot) => {
                *slot = value;
                true
            }
            None => false,
        }
    }

    pub fn interactions(&self, h: usize) -> &BTreeMap<(usize, usize), f64> {
        &self.interactions[h]
    }

    /// All parameters: main effects (vertex-major, slot-minor), then each
    /// slot's interactions in ascending edge order.
    pub fn flat(&self) -> Vec<f64> {
        self.main
            .iter()
            .flatten()
            .copied()
            .chain(self.interactions.iter().flat_map(|slot| slot.values().copied()))
            .collect()
    }

    /// `theta^v` in the layout of [`vertex_design_matrix`].
    pub fn vertex_vector(&self, structure: &DynamicIsingStructure, v: usize) -> Vec<f64> {
        let mut out = self.main[v].clone();
        for h in 0..structure.slot_count() {
            for u in structure.neighbors(v, h) {
                out.push(self.interaction(h, u, v).unwrap_or(0.0));
            }
        }
        out
    }

    /// The same parameters laid out for [`DynamicIsingStructure::to_model_spec`].
    pub fn to_parameter_set(&self, spec: &ModelSpec) -> Result<ParameterSet> {
        let blocks = (0..spec.slot_count())
            .map(|h| {
                spec.index_set(h)
                    .cells()
                    .iter()
                    .map(|j| match j.support().as_slice() {
                        [v] => Ok(self.main[*v][h]),
                        [u, v] => self.interaction(h, *u, *v).ok_or_else(|| {
                            Error::Validation(format!("no interaction ({u},{v}) in slot {h}"))
                        }),
                        _ => Err(Error::Validation("Ising models have only pairwise terms".into())),
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        ParameterSet::new(spec, blocks)
    }
}

/// `n x p` binary responses with an `n x H` covariate matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    vertex_count: usize,
    covariate_count: usize,
    y: Vec<u8>,
    x: Vec<f64>,
}

impl BinaryDataset {
    pub fn new(vertex_count: usize, covariate_count: usize) -> Self {
        Self {
            vertex_count,
            covariate_count,
            y: Vec::new(),
            x: Vec::new(),
        }
    }

    pub fn push(&mut self, y: &[u8], x: &[f64]) -> Result<()> {
        if y.len() != self.vertex_count || x.len() != self.covariate_count {
            return Err(Error::Dimension(format!(
                "row has {} responses and {} covariates, expected {} and {}",
                y.len(),
                x.len(),
                self.vertex_count,
                self.covariate_count
            )));
        }
        if y.iter().any(|&value| value > 1) {
            return Err(Error::Validation("binary responses must be 0 or 1".into()));
        }
        if x.iter().any(|value| !value.is_finite()) {
            return Err(Error::Validation("covariates must be finite".into()));
        }
        self.y.extend_from_slice(y);
        self.x.extend_from_slice(x);
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_count
    }

    pub fn len(&self) -> usize {
        self.y.len().checked_div(self.vertex_count).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn responses(&self, m: usize) -> &[u8] {
        &self.y[m * self.vertex_count..(m + 1) * self.vertex_count]
    }

    pub fn covariates(&self, m: usize) -> &[f64] {
        &self.x[m * self.covariate_count..(m + 1) * self.covariate_count]
    }

    pub fn value(&self, m: usize, v: usize) -> u8 {
        self.y[m * self.vertex_count + v]
    }

    /// The first `n` rows.
    pub fn prefix(&self, n: usize) -> BinaryDataset {
        let n = n.min(self.len());
        Self {
            vertex_count: self.vertex_count,
            covariate_count: self.covariate_count,
            y: self.y[..n * self.vertex_count].to_vec(),
            x: self.x[..n * self.covariate_count].to_vec(),
        }
    }

    /// Data matrix to contingency form: each row becomes the cell of its values.
    pub fn to_observations(&self) -> Result<ObservationSet> {
        let rows = (0..self.len()).map(|m| {
            let cell = Cell::new(self.responses(m).iter().map(|&b| b as usize).collect());
            (cell, self.covariates(m).to_vec())
        });
        ObservationSet::from_rows(LevelSpace::binary(self.vertex_count)?, self.covariate_count, rows)
    }

    pub fn from_observations(data: &ObservationSet) -> Result<Self> {
        if data.level_space().levels().iter().any(|&l| l != 2) {
            return Err(Error::Validation("only binary observations convert to a binary dataset".into()));
        }
        let mut out = Self::new(data.level_space().vertex_count(), data.covariate_count());
        for row in data.rows() {
            let y: Vec<u8> = row.cell.values().iter().map(|&v| v as u8).collect();
            out.push(&y, &row.covariates)?;
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^eta)` without overflow.
#[inline]
pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Log-odds of `y_v = 1` given the other coordinates of `y` (entry `v` is ignored).
pub fn linear_predictor(
    structure: &DynamicIsingStructure,
    params: &IsingParameters,
    y: &[u8],
    x: &[f64],
    v: usize,
) -> f64 {
    (0..structure.slot_count())
        .map(|h| {
            let coupling: f64 = structure
                .neighbors(v, h)
                .into_iter()
                .filter(|&u| y[u] == 1)
                .map(|u| params.interaction(h, u, v).unwrap_or(0.0))
                .sum();
            covariate_power(x, h) * (params.main_effect(v, h) + coupling)
        })
        .sum()
}

/// `p(y_v = 1 | y_{V∖v}, x)`.
pub fn conditional_prob(
    structure: &DynamicIsingStructure,
    params: &IsingParameters,
    y: &[u8],
    x: &[f64],
    v: usize,
) -> f64 {
    sigmoid(linear_predictor(structure, params, y, x, v))
}

#[derive(Debug, Clone, Copy)]
pub struct GibbsOptions {
    /// Full sweeps discarded before the first emitted state.
    pub burn_in: usize,
    /// Sweeps between the end of burn-in and the emitted state (at least 1).
    pub thinning: usize,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            burn_in: 500,
            thinning: 1,
        }
    }
}

/// Adjacency of the combined graph with per-slot coupling weights.
struct Couplings {
    neighbors: Vec<Vec<(usize, Vec<f64>)>>,
}

impl Couplings {
    fn new(structure: &DynamicIsingStructure, params: &IsingParameters) -> Self {
        let slots = structure.slot_count();
        let mut neighbors: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); structure.vertex_count()];
        for (u, v) in structure.combined_edges() {
            let weights: Vec<f64> = (0..slots).map(|h| params.interaction(h, u, v).unwrap_or(0.0)).collect();
            neighbors[u].push((v, weights.clone()));
            neighbors[v].push((u, weights));
        }
        Self { neighbors }
    }
}

/// One independent systematic-scan Gibbs chain per covariate row. Row `m`
/// uses the random stream `(seed, m)`, so output does not depend on
/// scheduling.
pub fn gibbs_sample(
    structure: &DynamicIsingStructure,
    params: &IsingParameters,
    covariates: &[Vec<f64>],
    options: GibbsOptions,
    seed: u64,
) -> Result<BinaryDataset> {
    if options.thinning == 0 {
        return Err(Error::Validation("thinning must be at least 1".into()));
    }
    let h_count = structure.covariate_count();
    if let Some(m) = covariates.iter().position(|x| x.len() != h_count) {
        return Err(Error::Dimension(format!(
            "covariate row {m} has length {}, the model has H = {h_count}",
            covariates[m].len()
        )));
    }
    let p = structure.vertex_count();
    let couplings = Couplings::new(structure, params);
    let slots = structure.slot_count();
    let sweeps = options.burn_in + options.thinning;
    let rows: Vec<Vec<u8>> = covariates
        .par_iter()
        .enumerate()
        .map(|(m, x)| {
            let powers: Vec<f64> = (0..slots).map(|h| covariate_power(x, h)).collect();
            let dot = |w: &[f64]| w.iter().zip(&powers).map(|(a, b)| a * b).sum::<f64>();
            let field: Vec<f64> = (0..p).map(|v| dot(&params.main[v])).collect();
            let adjacency: Vec<Vec<(usize, f64)>> = couplings
                .neighbors
                .iter()
                .map(|list| list.iter().map(|(u, w)| (*u, dot(w))).collect())
                .collect();
            let mut rng = seed::stream(seed, &[m as u64]);
            let mut y: Vec<u8> = (0..p).map(|_| u8::from(rng.random::<bool>())).collect();
            for _ in 0..sweeps {
                for v in 0..p {
                    let eta = field[v]
                        + adjacency[v]
                            .iter()
                            .filter(|(u, _)| y[*u] == 1)
                            .map(|(_, w)| w)
                            .sum::<f64>();
                    y[v] = u8::from(rng.random::<f64>() < sigmoid(eta));
                }
            }
            y
        })
        .collect();
    let mut data = BinaryDataset::new(p, h_count);
    for (y, x) in rows.iter().zip(covariates) {
        data.push(y, x)?;
    }
    Ok(data)
}

fn check_dataset(structure: &DynamicIsingStructure, data: &BinaryDataset, v: usize) -> Result<()> {
    if data.vertex_count() != structure.vertex_count() || data.covariate_count() != structure.covariate_count() {
        return Err(Error::Dimension(format!(
            "dataset is {} vertices x {} covariates, structure is {} x {}",
            data.vertex_count(),
            data.covariate_count(),
            structure.vertex_count(),
            structure.covariate_count()
        )));
    }
    if v >= structure.vertex_count() {
        return Err(Error::Dimension(format!("vertex {v} out of range")));
    }
    Ok(())
}

/// Design row of vertex `v` under the given per-slot neighbor lists.
pub(crate) fn design_row(y: &[u8], x: &[f64], neighbors: &[Vec<usize>], out: &mut Vec<f64>) {
    out.clear();
    for h in 0..neighbors.len() {
        out.push(covariate_power(x, h));
    }
    for (h, slot) in neighbors.iter().enumerate() {
        let power = covariate_power(x, h);
        out.extend(slot.iter().map(|&u| power * f64::from(y[u])));
    }
}

/// Distinct `(y, x)` rows of a dataset with multiplicities, in order of
/// first appearance. Covariate rows are stored once and referenced by index.
#[derive(Debug, Clone)]
pub(crate) struct PatternTable {
    covariates: Vec<Vec<f64>>,
    patterns: Vec<(usize, Vec<u8>)>,
    counts: Vec<f64>,
    rows: usize,
}

impl PatternTable {
    pub(crate) fn new(data: &BinaryDataset) -> Self {
        let mut covariate_index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut covariates = Vec::new();
        let mut index: HashMap<(usize, Vec<u8>), usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        for m in 0..data.len() {
            let x = data.covariates(m);
            let xi = *covariate_index
                .entry(x.iter().map(|v| v.to_bits()).collect())
                .or_insert_with(|| {
                    covariates.push(x.to_vec());
                    covariates.len() - 1
                });
            let key = (xi, data.responses(m).to_vec());
            let k = *index.entry(key.clone()).or_insert_with(|| {
                patterns.push(key);
                counts.push(0.0);
                patterns.len() - 1
            });
            counts[k] += 1.0;
        }
        Self {
            covariates,
            patterns,
            counts,
            rows: data.len(),
        }
    }

    pub(crate) fn rows(&self) -> usize {
        self.rows
    }
}

fn column_count(neighbors: &[Vec<usize>]) -> usize {
    neighbors.len() + neighbors.iter().map(Vec::len).sum::<usize>()
}

/// `n x (H + 1 + sum_h |U_v^h|)`: intercept columns `x^h`, then `x^h y_u`
/// for `u in U_v^h`, slot-major with ascending neighbors.
pub fn vertex_design_matrix(structure: &DynamicIsingStructure, data: &BinaryDataset, v: usize) -> Result<DMatrix<f64>> {
    check_dataset(structure, data, v)?;
    let neighbors = structure.neighborhoods(v);
    let cols = column_count(&neighbors);
    let mut matrix = DMatrix::zeros(data.len(), cols);
    let mut row = Vec::with_capacity(cols);
    for m in 0..data.len() {
        design_row(data.responses(m), data.covariates(m), &neighbors, &mut row);
        for (c, value) in row.iter().enumerate() {
            matrix[(m, c)] = *value;
        }
    }
    Ok(matrix)
}

/// `l^v(theta^v) = <theta^v, t> - sum_m log(1 + exp(d_m . theta^v))` with
/// `t = D^T y_v`.
pub fn vertex_pseudo_loglik(
    structure: &DynamicIsingStructure,
    coefficients: &[f64],
    data: &BinaryDataset,
    v: usize,
) -> Result<f64> {
    let design = vertex_design_matrix(structure, data, v)?;
    if coefficients.len() != design.ncols() {
        return Err(Error::Dimension(format!(
            "vertex {v} has {} coefficients, got {}",
            design.ncols(),
            coefficients.len()
        )));
    }
    let theta = DVector::from_column_slice(coefficients);
    let response = DVector::from_iterator(data.len(), (0..data.len()).map(|m| f64::from(data.value(m, v))));
    let t = design.transpose() * response;
    let eta = &design * &theta;
    Ok(theta.dot(&t) - eta.iter().map(|&e| softplus(e)).sum::<f64>())
}

/// Score `t - D^T P` of the vertex pseudo-log-likelihood.
pub fn vertex_score(
    structure: &DynamicIsingStructure,
    coefficients: &[f64],
    data: &BinaryDataset,
    v: usize,
) -> Result<DVector<f64>> {
    let design = vertex_design_matrix(structure, data, v)?;
    if coefficients.len() != design.ncols() {
        return Err(Error::Dimension("coefficient length does not match the design".into()));
    }
    let theta = DVector::from_column_slice(coefficients);
    let eta = &design * &theta;
    let residual = DVector::from_iterator(
        data.len(),
        (0..data.len()).map(|m| f64::from(data.value(m, v)) - sigmoid(eta[m])),
    );
    Ok(design.transpose() * residual)
}

#[derive(Debug, Clone)]
pub struct PseudoFitOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_halving_limit: usize,
    /// Coefficients beyond this magnitude mark a separated fit.
    pub coefficient_cap: f64,
}

impl Default for PseudoFitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_halving_limit: 30,
            coefficient_cap: SEPARATION_CAP,
        }
    }
}

/// Result of the logistic regression of one vertex on its neighborhood.
#[derive(Debug, Clone)]
pub struct VertexFit {
    pub vertex: usize,
    /// `U_v^h` for every slot.
    pub neighbors: Vec<Vec<usize>>,
    /// Intercepts `theta_{v,h}` followed by edge coefficients, design layout.
    pub coefficients: Vec<f64>,
    /// `l^v(theta_hat^v)`.
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    /// A coefficient hit the cap; estimates are capped.
    pub separation: bool,
    /// The design has linearly dependent columns.
    pub rank_deficient: bool,
    /// From the inverse negative Hessian; NaN when it is singular.
    pub standard_errors: Vec<f64>,
}

impl VertexFit {
    pub fn intercepts(&self) -> &[f64] {
        &self.coefficients[..self.neighbors.len()]
    }

    fn edge_position(&self, h: usize, u: usize) -> Option<usize> {
        let before: usize = self.neighbors[..h].iter().map(Vec::len).sum();
        self.neighbors[h]
            .iter()
            .position(|&w| w == u)
            .map(|pos| self.neighbors.len() + before + pos)
    }

    /// `theta_hat_{uv,h}` as estimated from this vertex.
    pub fn edge_coefficient(&self, h: usize, u: usize) -> Option<f64> {
        self.edge_position(h, u).map(|k| self.coefficients[k])
    }

    pub fn edge_standard_error(&self, h: usize, u: usize) -> Option<f64> {
        self.edge_position(h, u).map(|k| self.standard_errors[k])
    }

    pub fn is_flagged(&self) -> bool {
        self.separation || self.rank_deficient || !self.converged
    }
}

/// Design rows collapsed into distinct (row, response) patterns. Pattern
/// order is first appearance, so sums are reproducible.
struct AggregatedLogistic {
    rows: Vec<Vec<f64>>,
    trials: Vec<f64>,
    sufficient: DVector<f64>,
}

impl AggregatedLogistic {
    fn new(table: &PatternTable, v: usize, neighbors: &[Vec<usize>]) -> Self {
        let cols = column_count(neighbors);
        let mut union: Vec<usize> = neighbors.iter().flatten().copied().collect();
        union.sort_unstable();
        union.dedup();
        // Rows depend only on the covariate row and the neighbor values, so
        // patterns are grouped by a packed key of those.
        let mut packed: HashMap<(usize, u128), usize> = HashMap::new();
        let mut general: HashMap<(usize, Vec<u8>), usize> = HashMap::new();
        let mut representative = Vec::new();
        let mut trials = Vec::new();
        let mut successes = Vec::new();
        for (pi, ((xi, y), &count)) in table.patterns.iter().zip(&table.counts).enumerate() {
            let fresh = representative.len();
            let k = if union.len() <= 128 {
                let bits = union
                    .iter()
                    .enumerate()
                    .fold(0u128, |acc, (b, &u)| acc | (u128::from(y[u]) << b));
                *packed.entry((*xi, bits)).or_insert(fresh)
            } else {
                let values: Vec<u8> = union.iter().map(|&u| y[u]).collect();
                *general.entry((*xi, values)).or_insert(fresh)
            };
            if k == fresh {
                representative.push(pi);
                trials.push(0.0);
                successes.push(0.0);
            }
            trials[k] += count;
            successes[k] += count * f64::from(y[v]);
        }
        let rows: Vec<Vec<f64>> = representative
            .iter()
            .map(|&pi| {
                let (xi, y) = &table.patterns[pi];
                let mut row = Vec::with_capacity(cols);
                design_row(y, &table.covariates[*xi], neighbors, &mut row);
                row
            })
            .collect();
        let mut sufficient = DVector::zeros(cols);
        for (r, s) in rows.iter().zip(&successes) {
            for (c, value) in r.iter().enumerate() {
                sufficient[c] += s * value;
            }
        }
        Self {
            rows,
            trials,
            sufficient,
        }
    }

    fn eta(&self, row: &[f64], theta: &[f64]) -> f64 {
        row.iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let linear: f64 = self.sufficient.iter().zip(theta).map(|(t, b)| t * b).sum();
        let normalizer: f64 = self
            .rows
            .iter()
            .zip(&self.trials)
            .map(|(row, w)| w * softplus(self.eta(row, theta)))
            .sum();
        linear - normalizer
    }

    /// Score and information (negative Hessian).
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = theta.len();
        let mut expected = DVector::zeros(d);
        let mut information = DMatrix::zeros(d, d);
        for (row, &w) in self.rows.iter().zip(&self.trials) {
            let p = sigmoid(self.eta(row, theta));
            let weight = w * p * (1.0 - p);
            for a in 0..d {
                expected[a] += w * p * row[a];
                if row[a] != 0.0 {
                    let wa = weight * row[a];
                    for b in 0..=a {
                        information[(a, b)] += wa * row[b];
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                information[(b, a)] = information[(a, b)];
            }
        }
        (&self.sufficient - expected, information)
    }

    fn gram(&self) -> DMatrix<f64> {
        let d = self.sufficient.len();
        let mut gram = DMatrix::zeros(d, d);
        for (row, &w) in self.rows.iter().zip(&self.trials) {
            for a in 0..d {
                for b in 0..d {
                    gram[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        gram
    }
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Damped Newton logistic regression of `y_v` on the design of `neighbors`.
pub(crate) fn fit_neighborhood(
    table: &PatternTable,
    v: usize,
    neighbors: &[Vec<usize>],
    options: &PseudoFitOptions,
) -> VertexFit {
    let problem = AggregatedLogistic::new(table, v, neighbors);
    let d = column_count(neighbors);
    let rank_deficient = table.rows() == 0 || is_rank_deficient(&problem.gram());
    let mut theta = vec![0.0; d];
    let mut ll = problem.log_likelihood(&theta);
    let (mut score, mut information) = problem.derivatives(&theta);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        if sup_norm(&score) <= options.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let Some((step, _)) = newton_step(&information, &score) else {
            break;
        };
        let slack = 1e-12 * ll.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=options.step_halving_limit {
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let candidate_ll = problem.log_likelihood(&candidate);
            if candidate_ll.is_finite() && candidate_ll >= ll - slack {
                theta = candidate;
                ll = candidate_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        if theta.iter().any(|t| t.abs() > options.coefficient_cap) {
            separation = true;
            for t in &mut theta {
                *t = t.clamp(-options.coefficient_cap, options.coefficient_cap);
            }
            ll = problem.log_likelihood(&theta);
            (score, information) = problem.derivatives(&theta);
            break;
        }
        (score, information) = problem.derivatives(&theta);
    }
    if !converged && !separation && sup_norm(&score) <= options.gradient_tolerance {
        converged = true;
    }
    if rank_deficient {
        converged = false;
    }
    let standard_errors = if rank_deficient || separation {
        vec![f64::NAN; d]
    } else {
        match information.clone().cholesky() {
            Some(chol) => chol.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
            None => vec![f64::NAN; d],
        }
    };
    VertexFit {
        vertex: v,
        neighbors: neighbors.to_vec(),
        coefficients: theta,
        log_likelihood: ll,
        converged,
        iterations,
        score_norm: sup_norm(&score),
        separation,
        rank_deficient,
        standard_errors,
    }
}

/// Pseudo-likelihood fit of vertex `v` on its neighborhoods in `structure`.
pub fn fit_vertex(
    structure: &DynamicIsingStructure,
    data: &BinaryDataset,
    v: usize,
    options: &PseudoFitOptions,
) -> Result<VertexFit> {
    check_dataset(structure, data, v)?;
    let neighbors = structure.neighborhoods(v);
    if data.len() <= column_count(&neighbors) {
        log::warn!(
            "vertex {v}: {} rows for {} coefficients",
            data.len(),
            column_count(&neighbors)
        );
    }
    Ok(fit_neighborhood(&PatternTable::new(data), v, &neighbors, options))
}

#[derive(Debug, Clone)]
pub struct PseudoFit {
    pub parameters: IsingParameters,
    pub vertex_fits: Vec<VertexFit>,
}

impl PseudoFit {
    /// Vertices whose fit was flagged (separation, rank deficiency, non-convergence).
    pub fn flagged_vertices(&self) -> Vec<usize> {
        self.vertex_fits.iter().filter(|f| f.is_flagged()).map(|f| f.vertex).collect()
    }

    /// Standard error attached to an averaged edge estimate: the mean of the
    /// two vertex-fit standard errors.
    pub fn edge_standard_error(&self, h: usize, u: usize, v: usize) -> Option<f64> {
        let a = self.vertex_fits[u].edge_standard_error(h, v)?;
        let b = self.vertex_fits[v].edge_standard_error(h, u)?;
        Some(0.5 * (a + b))
    }
}

/// Fits every vertex independently; each edge estimate is the mean of the
/// two estimates obtained at its endpoints.
pub fn fit_pseudo(
    structure: &DynamicIsingStructure,
    data: &BinaryDataset,
    options: &PseudoFitOptions,
) -> Result<PseudoFit> {
    check_dataset(structure, data, 0)?;
    let table = PatternTable::new(data);
    let vertex_fits: Vec<VertexFit> = (0..structure.vertex_count())
        .into_par_iter()
        .map(|v| fit_neighborhood(&table, v, &structure.neighborhoods(v), options))
        .collect();
    let mut parameters = IsingParameters::zeros(structure);
    for fit in &vertex_fits {
        for (h, &value) in fit.intercepts().iter().enumerate() {
            parameters.set_main_effect(fit.vertex, h, value);
        }
    }
    for h in 0..structure.slot_count() {
        for &(u, v) in structure.edges(h) {
            let from_u = vertex_fits[u].edge_coefficient(h, v).unwrap();
            let from_v = vertex_fits[v].edge_coefficient(h, u).unwrap();
            parameters.set_interaction(h, u, v, 0.5 * (from_u + from_v));
        }
    }
    Ok(PseudoFit {
        parameters,
        vertex_fits,
    })
}

/// `||estimate - truth||^2 / ||truth||^2`.
pub fn relative_mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "estimate has length {}, truth has length {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denominator: f64 = truth.iter().map(|t| t * t).sum();
    if denominator == 0.0 {
        return Err(Error::Validation("relative MSE is undefined for a zero true vector".into()));
    }
    let numerator: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).sum();
    Ok(numerator / denominator)
}
