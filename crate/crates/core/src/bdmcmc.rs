//! Birth-death MCMC neighborhood selection for dynamic Ising models.
//!
//! For each vertex `v` a continuous-time chain moves over neighborhood
//! states, sets of `(u, h)` pairs meaning `u ∈ U_v^h`. A state's score is the
//! BIC (or EBIC) approximation of its log marginal likelihood. Births and
//! deaths fire at rates `min(exp(Δscore), 1)`; the chain stays in a state
//! for the reciprocal of the total rate. Holding-time-weighted occupancy
//! estimates inclusion probabilities, which are thresholded and combined
//! across vertices with the AND or OR rule.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ising::{fit_neighborhood, BinaryDataset, PatternTable, PseudoFitOptions};
use crate::seed;

/// Score differences are clamped to this magnitude before exponentiation.
pub const SCORE_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Bic,
    /// Extended BIC with penalty `2 ω p_v log p` added to BIC.
    Ebic { omega: f64 },
}

impl Criterion {
    fn validate(&self) -> Result<()> {
        match *self {
            Criterion::Bic => Ok(()),
            Criterion::Ebic { omega } if omega.is_finite() && omega >= 0.0 => Ok(()),
            Criterion::Ebic { omega } => Err(Error::Validation(format!("EBIC requires omega >= 0, got {omega}"))),
        }
    }

    /// Penalty subtracted from the log-likelihood, i.e. half the BIC/EBIC
    /// penalty, for `terms` edge terms.
    fn penalty(&self, terms: usize, rows: usize, vertex_count: usize) -> f64 {
        let k = terms as f64;
        let bic = 0.5 * k * (rows as f64).ln();
        match *self {
            Criterion::Bic => bic,
            Criterion::Ebic { omega } => bic + omega * k * (vertex_count as f64).ln(),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Bic => write!(f, "BIC"),
            Criterion::Ebic { omega } => write!(f, "EBIC(omega={omega})"),
        }
    }
}

/// Neighborhood of one vertex as a set of `(u, h)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NeighborhoodState {
    vertex: usize,
    terms: BTreeSet<(usize, usize)>,
}

impl NeighborhoodState {
    pub fn empty(vertex: usize) -> Self {
        Self {
            vertex,
            terms: BTreeSet::new(),
        }
    }

    pub fn new(vertex: usize, terms: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let terms: BTreeSet<(usize, usize)> = terms.into_iter().collect();
        if terms.iter().any(|&(u, _)| u == vertex) {
            return Err(Error::Validation(format!("vertex {vertex} cannot neighbor itself")));
        }
        Ok(Self { vertex, terms })
    }

    pub fn vertex(&self) -> usize {
        self.vertex
    }

    pub fn terms(&self) -> &BTreeSet<(usize, usize)> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn contains(&self, u: usize, h: usize) -> bool {
        self.terms.contains(&(u, h))
    }

    /// Copy with `(u, h)` toggled.
    pub fn toggled(&self, u: usize, h: usize) -> Self {
        let mut next = self.clone();
        if !next.terms.remove(&(u, h)) {
            next.terms.insert((u, h));
        }
        next
    }

    /// `U_v^h` for `h = 0..slots`.
    pub fn neighbor_lists(&self, slots: usize) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); slots];
        for &(u, h) in &self.terms {
            lists[h].push(u);
        }
        for list in &mut lists {
            list.sort_unstable();
        }
        lists
    }

    fn check(&self, vertex_count: usize, slots: usize) -> Result<()> {
        if self.vertex >= vertex_count {
            return Err(Error::Dimension(format!("vertex {} out of range", self.vertex)));
        }
        if let Some(&(u, h)) = self.terms.iter().find(|&&(u, h)| u >= vertex_count || h >= slots || u == self.vertex) {
            return Err(Error::Validation(format!(
                "term ({u}, {h}) is not a valid neighbor of vertex {}",
                self.vertex
            )));
        }
        Ok(())
    }
}

impl fmt::Display for NeighborhoodState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (u, h)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{u}@{h}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborhoodScore {
    /// `ℓ^v(θ̂^v) − penalty`, i.e. minus half the criterion.
    pub score: f64,
    pub log_likelihood: f64,
    /// The underlying fit hit separation, rank deficiency or non-convergence.
    pub flagged: bool,
}

/// Scores neighborhoods of one vertex with a per-run cache.
pub struct NeighborhoodScorer<'a> {
    table: &'a PatternTable,
    vertex: usize,
    vertex_count: usize,
    slots: usize,
    criterion: Criterion,
    fit_options: PseudoFitOptions,
    cache: HashMap<NeighborhoodState, NeighborhoodScore>,
}

impl<'a> NeighborhoodScorer<'a> {
    fn new(
        table: &'a PatternTable,
        vertex: usize,
        vertex_count: usize,
        slots: usize,
        criterion: Criterion,
        fit_options: PseudoFitOptions,
    ) -> Self {
        Self {
            table,
            vertex,
            vertex_count,
            slots,
            criterion,
            fit_options,
            cache: HashMap::new(),
        }
    }

    /// Score without consulting or filling the cache.
    pub fn compute(&self, state: &NeighborhoodState) -> NeighborhoodScore {
        let fit = fit_neighborhood(self.table, self.vertex, &state.neighbor_lists(self.slots), &self.fit_options);
        NeighborhoodScore {
            score: fit.log_likelihood - self.criterion.penalty(state.len(), self.table.rows(), self.vertex_count),
            log_likelihood: fit.log_likelihood,
            flagged: fit.is_flagged(),
        }
    }

    pub fn score(&mut self, state: &NeighborhoodState) -> NeighborhoodScore {
        if let Some(hit) = self.cache.get(state) {
            return *hit;
        }
        let value = self.compute(state);
        self.cache.insert(state.clone(), value);
        value
    }

    pub fn cached_states(&self) -> usize {
        self.cache.len()
    }

    /// Every `(u, h)` with `u ≠ v`, ordered by `u` then `h`.
    fn candidates(&self) -> Vec<(usize, usize)> {
        (0..self.vertex_count)
            .filter(|&u| u != self.vertex)
            .flat_map(|u| (0..self.slots).map(move |h| (u, h)))
            .collect()
    }

    fn rates(&mut self, state: &NeighborhoodState) -> Vec<Move> {
        let current = self.score(state).score;
        self.candidates()
            .into_iter()
            .map(|(u, h)| {
                let next = state.toggled(u, h);
                let delta = self.score(&next).score - current;
                Move {
                    u,
                    h,
                    birth: !state.contains(u, h),
                    rate: jump_rate(delta),
                }
            })
            .collect()
    }
}

/// `min(exp(delta), 1)` with `delta` clamped to `±SCORE_CLAMP`; NaN gives 0.
pub fn jump_rate(delta: f64) -> f64 {
    if delta.is_nan() {
        return 0.0;
    }
    delta.clamp(-SCORE_CLAMP, SCORE_CLAMP).exp().min(1.0)
}

fn check_inputs(data: &BinaryDataset, v: usize, criterion: &Criterion) -> Result<()> {
    criterion.validate()?;
    if data.vertex_count() < 2 {
        return Err(Error::Validation("neighborhood selection needs at least two vertices".into()));
    }
    if v >= data.vertex_count() {
        return Err(Error::Dimension(format!("vertex {v} out of range")));
    }
    Ok(())
}

/// `−BIC/2` or `−EBIC/2` of the logistic regression of `y_v` on `state`.
pub fn neighborhood_score(
    data: &BinaryDataset,
    v: usize,
    state: &NeighborhoodState,
    criterion: Criterion,
) -> Result<NeighborhoodScore> {
    check_inputs(data, v, &criterion)?;
    if state.vertex() != v {
        return Err(Error::Validation(format!("state belongs to vertex {}, not {v}", state.vertex())));
    }
    let slots = data.covariate_count() + 1;
    state.check(data.vertex_count(), slots)?;
    let table = PatternTable::new(data);
    let scorer = NeighborhoodScorer::new(&table, v, data.vertex_count(), slots, criterion, PseudoFitOptions::default());
    Ok(scorer.compute(state))
}

/// A single birth (`(u, h)` added) or death (`(u, h)` removed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub u: usize,
    pub h: usize,
    pub birth: bool,
    pub rate: f64,
}

/// Rates of every birth and death available from `state`.
pub fn birth_death_rates(
    data: &BinaryDataset,
    v: usize,
    state: &NeighborhoodState,
    criterion: Criterion,
) -> Result<Vec<Move>> {
    check_inputs(data, v, &criterion)?;
    let slots = data.covariate_count() + 1;
    state.check(data.vertex_count(), slots)?;
    let table = PatternTable::new(data);
    let mut scorer = NeighborhoodScorer::new(&table, v, data.vertex_count(), slots, criterion, PseudoFitOptions::default());
    Ok(scorer.rates(state))
}

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub criterion: Criterion,
    /// Number of jumps per vertex.
    pub iterations: usize,
    /// Leading jumps excluded from averaging; `None` means 20% of `iterations`.
    pub burn_in: Option<usize>,
    /// Inclusion threshold, inclusive.
    pub threshold: f64,
    pub seed: u64,
    pub fit: PseudoFitOptions,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::Bic,
            iterations: 5000,
            burn_in: None,
            threshold: 0.5,
            seed: 0,
            fit: PseudoFitOptions::default(),
        }
    }
}

impl SelectOptions {
    pub fn burn_in_jumps(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 5)
    }

    pub fn validate(&self) -> Result<()> {
        self.criterion.validate()?;
        if self.iterations == 0 || self.iterations <= self.burn_in_jumps() {
            return Err(Error::Validation(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations,
                self.burn_in_jumps()
            )));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Validation(format!("threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub state: NeighborhoodState,
    pub holding_time: f64,
    pub score: f64,
}

/// Sample path of one vertex's chain; entry `s` is the state occupied
/// before jump `s + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodTrace {
    pub vertex: usize,
    pub vertex_count: usize,
    pub slot_count: usize,
    pub entries: Vec<TraceEntry>,
    /// Distinct states whose fit was flagged.
    pub flagged_states: usize,
    pub distinct_states: usize,
}

impl NeighborhoodTrace {
    pub fn total_time(&self) -> f64 {
        self.entries.iter().map(|e| e.holding_time).sum()
    }

    /// Holding-time-weighted share of each visited state after `burn_in`.
    pub fn occupancy(&self, burn_in: usize) -> BTreeMap<NeighborhoodState, f64> {
        let tail = &self.entries[burn_in.min(self.entries.len())..];
        let total: f64 = tail.iter().map(|e| e.holding_time).sum();
        let mut out = BTreeMap::new();
        for entry in tail {
            *out.entry(entry.state.clone()).or_insert(0.0) += entry.holding_time / total;
        }
        out
    }
}

/// Runs the birth-death chain of vertex `v` from the empty neighborhood.
/// The random stream is `(options.seed, v)`.
pub fn bdmcmc_run(data: &BinaryDataset, v: usize, options: &SelectOptions) -> Result<NeighborhoodTrace> {
    check_inputs(data, v, &options.criterion)?;
    options.validate()?;
    let table = PatternTable::new(data);
    run_chain(&table, data.vertex_count(), data.covariate_count() + 1, v, options)
}

fn run_chain(
    table: &PatternTable,
    vertex_count: usize,
    slots: usize,
    v: usize,
    options: &SelectOptions,
) -> Result<NeighborhoodTrace> {
    let mut scorer = NeighborhoodScorer::new(table, v, vertex_count, slots, options.criterion, options.fit.clone());
    let mut rng = seed::stream(options.seed, &[v as u64]);
    let mut state = NeighborhoodState::empty(v);
    let mut entries = Vec::with_capacity(options.iterations);
    for jump in 0..options.iterations {
        let moves = scorer.rates(&state);
        let total: f64 = moves.iter().map(|m| m.rate).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numerical(format!(
                "vertex {v}: all jump rates vanish in state {state} at jump {jump}"
            )));
        }
        let score = scorer.score(&state).score;
        entries.push(TraceEntry {
            state: state.clone(),
            holding_time: 1.0 / total,
            score,
        });
        let target = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut chosen = moves[moves.len() - 1];
        for m in &moves {
            cumulative += m.rate;
            if target < cumulative {
                chosen = *m;
                break;
            }
        }
        state = state.toggled(chosen.u, chosen.h);
    }
    let flagged_states = scorer.cache.values().filter(|s| s.flagged).count();
    Ok(NeighborhoodTrace {
        vertex: v,
        vertex_count,
        slot_count: slots,
        entries,
        flagged_states,
        distinct_states: scorer.cached_states(),
    })
}

/// Holding-time-weighted inclusion probability of each `(u, h)` after `burn_in`.
pub fn inclusion_probabilities(trace: &NeighborhoodTrace, burn_in: usize) -> Result<BTreeMap<(usize, usize), f64>> {
    if trace.entries.len() <= burn_in {
        return Err(Error::Validation(format!(
            "trace has {} entries, burn-in is {burn_in}",
            trace.entries.len()
        )));
    }
    let tail = &trace.entries[burn_in..];
    let total: f64 = tail.iter().map(|e| e.holding_time).sum();
    let mut out: BTreeMap<(usize, usize), f64> = (0..trace.vertex_count)
        .filter(|&u| u != trace.vertex)
        .flat_map(|u| (0..trace.slot_count).map(move |h| ((u, h), 0.0)))
        .collect();
    for entry in tail {
        for term in entry.state.terms() {
            *out.get_mut(term).expect("term is a candidate") += entry.holding_time;
        }
    }
    for value in out.values_mut() {
        *value = (*value / total).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineRule {
    And,
    Or,
}

impl fmt::Display for CombineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombineRule::And => write!(f, "AND"),
            CombineRule::Or => write!(f, "OR"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub vertex_count: usize,
    pub slot_count: usize,
    pub threshold: f64,
    /// Per vertex, inclusion probability of every `(u, h)`.
    pub probabilities: Vec<BTreeMap<(usize, usize), f64>>,
    /// Per vertex, the `(u, h)` pairs at or above the threshold.
    pub neighborhoods: Vec<BTreeSet<(usize, usize)>>,
    pub and_edges: Vec<BTreeSet<(usize, usize)>>,
    pub or_edges: Vec<BTreeSet<(usize, usize)>>,
    /// Vertices whose chain visited at least one flagged fit.
    pub flagged_vertices: Vec<usize>,
}

impl SelectionResult {
    pub fn edges(&self, rule: CombineRule, h: usize) -> &BTreeSet<(usize, usize)> {
        match rule {
            CombineRule::And => &self.and_edges[h],
            CombineRule::Or => &self.or_edges[h],
        }
    }
}

/// Thresholds each vertex's probabilities and combines neighborhoods into
/// edge sets under both rules.
pub fn threshold_and_combine(
    probabilities: Vec<BTreeMap<(usize, usize), f64>>,
    slot_count: usize,
    threshold: f64,
) -> Result<SelectionResult> {
    let vertex_count = probabilities.len();
    if probabilities
        .iter()
        .enumerate()
        .any(|(v, map)| map.keys().any(|&(u, h)| u == v || u >= vertex_count || h >= slot_count))
    {
        return Err(Error::Validation("inclusion probabilities reference invalid pairs".into()));
    }
    let neighborhoods: Vec<BTreeSet<(usize, usize)>> = probabilities
        .iter()
        .map(|map| map.iter().filter(|(_, &p)| p >= threshold).map(|(&k, _)| k).collect())
        .collect();
    let mut and_edges = vec![BTreeSet::new(); slot_count];
    let mut or_edges = vec![BTreeSet::new(); slot_count];
    for u in 0..vertex_count {
        for v in u + 1..vertex_count {
            for h in 0..slot_count {
                let a = neighborhoods[v].contains(&(u, h));
                let b = neighborhoods[u].contains(&(v, h));
                if a && b {
                    and_edges[h].insert((u, v));
                }
                if a || b {
                    or_edges[h].insert((u, v));
                }
            }
        }
    }
    Ok(SelectionResult {
        vertex_count,
        slot_count,
        threshold,
        probabilities,
        neighborhoods,
        and_edges,
        or_edges,
        flagged_vertices: Vec::new(),
    })
}

/// Per-vertex chains (run concurrently), averaging, thresholding and combination.
pub fn select(data: &BinaryDataset, options: &SelectOptions) -> Result<SelectionResult> {
    check_inputs(data, 0, &options.criterion)?;
    options.validate()?;
    let table = PatternTable::new(data);
    let slots = data.covariate_count() + 1;
    let traces: Vec<NeighborhoodTrace> = (0..data.vertex_count())
        .into_par_iter()
        .map(|v| run_chain(&table, data.vertex_count(), slots, v, options))
        .collect::<Result<_>>()?;
    let burn_in = options.burn_in_jumps();
    let probabilities = traces
        .iter()
        .map(|t| inclusion_probabilities(t, burn_in))
        .collect::<Result<Vec<_>>>()?;
    let mut result = threshold_and_combine(probabilities, slots, options.threshold)?;
    result.flagged_vertices = traces.iter().filter(|t| t.flagged_states > 0).map(|t| t.vertex).collect();
    Ok(result)
}

/// `2TP / (2TP + FP + FN)`; 1 when both sets are empty.
pub fn f1_score(estimate: &BTreeSet<(usize, usize)>, truth: &BTreeSet<(usize, usize)>) -> f64 {
    let tp = estimate.intersection(truth).count() as f64;
    let fp = estimate.difference(truth).count() as f64;
    let fn_ = truth.difference(estimate).count() as f64;
    let denominator = 2.0 * tp + fp + fn_;
    if denominator == 0.0 {
        1.0
    } else {
        2.0 * tp / denominator
    }
}
