//! Cell algebra and likelihood of the covariate-dependent hierarchical
//! log-linear model.
//!
//! A model is given by a [`LevelSpace`] (the contingency table `I`) and one
//! [`GeneratingClass`] per covariate slot `h = 0..=H`. Slot 0 is the baseline
//! graph; slot `h > 0` holds the terms whose parameters are multiplied by the
//! covariate `x^h`. For a cell `i` and covariate vector `x` (with the implicit
//! `x^0 = 1`),
//!
//! ```text
//! log p(i | x) / p(0 | x) = z_i(x) = sum_h x^h <theta_h, f_{h,i}>
//! ```
//!
//! where `f_{h,i}` is the 0/1 indicator of the interaction cells `j` in `J_h`
//! with `j` to the left of `i`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest table the exact (full enumeration) path will handle.
pub const MAX_EXACT_CELLS: usize = 1 << 20;

/// Largest maximal set accepted when closing a generating class.
const MAX_CLOSURE_SET: usize = 24;

/// Level counts `|I_v|` for every vertex. Level 0 is each vertex's baseline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelSpace {
    levels: Vec<usize>,
}

impl LevelSpace {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Validation("a level space needs at least one vertex".into()));
        }
        if let Some(v) = levels.iter().position(|&l| l < 2) {
            return Err(Error::Validation(format!(
                "vertex {v} has {} levels, at least 2 are required",
                levels[v]
            )));
        }
        Ok(Self { levels })
    }

    /// `p` binary vertices.
    pub fn binary(p: usize) -> Result<Self> {
        Self::new(vec![2; p])
    }

    pub fn vertex_count(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// `|I|`, saturating at `u128::MAX`.
    pub fn cell_count(&self) -> u128 {
        self.levels
            .iter()
            .try_fold(1u128, |acc, &l| acc.checked_mul(l as u128))
            .unwrap_or(u128::MAX)
    }

    /// `|I|` when it is within the exact-path bound.
    pub fn exact_cell_count(&self) -> Result<usize> {
        let cells = self.cell_count();
        if cells > MAX_EXACT_CELLS as u128 {
            return Err(Error::Capacity {
                cells,
                limit: MAX_EXACT_CELLS,
            });
        }
        Ok(cells as usize)
    }

    pub fn check_cell(&self, cell: &Cell) -> Result<()> {
        if cell.0.len() != self.levels.len() {
            return Err(Error::Dimension(format!(
                "cell {cell} has {} vertices, level space has {}",
                cell.0.len(),
                self.levels.len()
            )));
        }
        for (v, (&value, &levels)) in cell.0.iter().zip(&self.levels).enumerate() {
            if value >= levels {
                return Err(Error::Validation(format!(
                    "cell {cell}: level {value} at vertex {v} is outside 0..{levels}"
                )));
            }
        }
        Ok(())
    }

    /// Position of `cell` in the canonical cell order (mixed radix, last
    /// vertex varying fastest). Assumes a valid cell.
    pub fn cell_index(&self, cell: &Cell) -> usize {
        cell.0
            .iter()
            .zip(&self.levels)
            .fold(0usize, |acc, (&value, &levels)| acc * levels + value)
    }

    /// Inverse of [`LevelSpace::cell_index`].
    pub fn cell_at(&self, mut index: usize) -> Cell {
        let mut values = vec![0; self.levels.len()];
        for (slot, &levels) in values.iter_mut().zip(&self.levels).rev() {
            *slot = index % levels;
            index /= levels;
        }
        Cell(values)
    }

    /// All cells in canonical order. Requires the exact-path bound.
    pub fn cells(&self) -> Result<impl Iterator<Item = Cell> + '_> {
        let count = self.exact_cell_count()?;
        Ok((0..count).map(move |index| self.cell_at(index)))
    }
}

/// One joint level assignment `i = (i_v)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell(Vec<usize>);

impl Cell {
    pub fn new(values: Vec<usize>) -> Self {
        Self(values)
    }

    pub fn zero(p: usize) -> Self {
        Self(vec![0; p])
    }

    /// Parses the compact notation `"101"` (one decimal digit per vertex).
    pub fn from_digits(digits: &str) -> Result<Self> {
        digits
            .chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as usize)
                    .ok_or_else(|| Error::Validation(format!("'{c}' is not a level digit")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn vertex_count(&self) -> usize {
        self.0.len()
    }

    /// `S(i)`: vertices at a non-baseline level, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &value)| value != 0)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&value| value == 0)
    }

    /// The cell agreeing with `self` on `vertices` and at baseline elsewhere.
    pub fn restrict(&self, vertices: &[usize]) -> Cell {
        let mut values = vec![0; self.0.len()];
        for &v in vertices {
            values[v] = self.0[v];
        }
        Cell(values)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.iter().all(|&value| value < 10) {
            for value in &self.0 {
                write!(f, "{value}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
            write!(f, "({})", parts.join(","))
        }
    }
}

/// `j ◁ i`: `S(j) ⊆ S(i)` and `j` agrees with `i` on `S(j)`.
pub fn left_of(j: &Cell, i: &Cell) -> Result<bool> {
    if j.0.len() != i.0.len() {
        return Err(Error::Dimension(format!(
            "cells {j} and {i} have different vertex counts"
        )));
    }
    Ok(j.0.iter().zip(&i.0).all(|(&jv, &iv)| jv == 0 || jv == iv))
}

/// A hierarchical (subset-closed) collection of nonempty vertex sets.
///
/// Sets are stored sorted, ordered by size and then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GeneratingClass {
    sets: Vec<Vec<usize>>,
}

impl GeneratingClass {
    /// The empty class (no terms in this slot).
    pub fn empty() -> Self {
        Self::default()
    }

    /// Accepts an already closed collection; rejects one missing a subset.
    pub fn new(sets: Vec<Vec<usize>>) -> Result<Self> {
        let normalized = normalize_sets(sets)?;
        if !is_hierarchical(&normalized) {
            return Err(Error::Validation(
                "generating class is not closed under nonempty subsets".into(),
            ));
        }
        Ok(Self::from_normalized(normalized))
    }

    /// Builds the closure of the given (typically maximal) sets.
    pub fn from_maximal(sets: Vec<Vec<usize>>) -> Result<Self> {
        let normalized = normalize_sets(sets)?;
        let mut closed = BTreeSet::new();
        for set in &normalized {
            if set.len() > MAX_CLOSURE_SET {
                return Err(Error::Validation(format!(
                    "interaction of order {} exceeds the supported maximum {MAX_CLOSURE_SET}",
                    set.len()
                )));
            }
            for mask in 1u32..(1u32 << set.len()) {
                let subset: Vec<usize> = set
                    .iter()
                    .enumerate()
                    .filter(|(bit, _)| mask & (1 << bit) != 0)
                    .map(|(_, &v)| v)
                    .collect();
                closed.insert(subset);
            }
        }
        Ok(Self::from_normalized(closed.into_iter().collect()))
    }

    /// All singletons plus the given pairs: the class of a pairwise (Ising) model.
    pub fn pairwise(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut sets: Vec<Vec<usize>> = (0..p).map(|v| vec![v]).collect();
        sets.extend(edges.into_iter().map(|(u, v)| vec![u, v]));
        Self::from_maximal(sets)
    }

    fn from_normalized(mut sets: Vec<Vec<usize>>) -> Self {
        sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        sets.dedup();
        Self { sets }
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn contains(&self, set: &[usize]) -> bool {
        self.sets.iter().any(|s| s == set)
    }

    /// Sets not strictly contained in another member.
    pub fn maximal_sets(&self) -> Vec<Vec<usize>> {
        self.sets
            .iter()
            .filter(|a| {
                !self
                    .sets
                    .iter()
                    .any(|b| b.len() > a.len() && a.iter().all(|v| b.contains(v)))
            })
            .cloned()
            .collect()
    }

    pub fn max_vertex(&self) -> Option<usize> {
        self.sets.iter().flatten().copied().max()
    }

    pub fn is_subclass_of(&self, other: &GeneratingClass) -> bool {
        self.sets.iter().all(|s| other.contains(s))
    }
}

fn normalize_sets(sets: Vec<Vec<usize>>) -> Result<Vec<Vec<usize>>> {
    sets.into_iter()
        .map(|mut set| {
            set.sort_unstable();
            set.dedup();
            if set.is_empty() {
                Err(Error::Validation(
                    "generating classes contain only nonempty vertex sets".into(),
                ))
            } else {
                Ok(set)
            }
        })
        .collect()
}

/// Direct enumeration check of subset closure.
pub fn is_hierarchical(sets: &[Vec<usize>]) -> bool {
    let members: BTreeSet<&[usize]> = sets.iter().map(|s| s.as_slice()).collect();
    sets.iter().all(|set| {
        (1u64..(1u64 << set.len().min(63))).all(|mask| {
            let subset: Vec<usize> = set
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, &v)| v)
                .collect();
            members.contains(subset.as_slice())
        })
    })
}

/// `J = { j in I : S(j) in Δ }` in canonical order: by interaction order,
/// then vertex set, then levels.
#[derive(Debug, Clone)]
pub struct InteractionIndexSet {
    cells: Vec<Cell>,
    supports: Vec<usize>,
    position: HashMap<Cell, usize>,
}

impl InteractionIndexSet {
    pub fn new(space: &LevelSpace, class: &GeneratingClass) -> Self {
        let p = space.vertex_count();
        let mut cells = Vec::new();
        let mut supports = Vec::new();
        for (set_index, set) in class.sets().iter().enumerate() {
            // Odometer over non-baseline levels 1..|I_v| of the vertices in `set`.
            let mut levels = vec![1usize; set.len()];
            'odometer: loop {
                let mut values = vec![0; p];
                for (&v, &level) in set.iter().zip(&levels) {
                    values[v] = level;
                }
                cells.push(Cell(values));
                supports.push(set_index);
                let mut k = set.len();
                loop {
                    if k == 0 {
                        break 'odometer;
                    }
                    k -= 1;
                    levels[k] += 1;
                    if levels[k] < space.levels()[set[k]] {
                        continue 'odometer;
                    }
                    levels[k] = 1;
                }
            }
        }
        let position = cells.iter().cloned().enumerate().map(|(k, c)| (c, k)).collect();
        Self {
            cells,
            supports,
            position,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn position(&self, cell: &Cell) -> Option<usize> {
        self.position.get(cell).copied()
    }

    /// Index (into the generating class) of the support of entry `k`.
    pub fn support_set(&self, k: usize) -> usize {
        self.supports[k]
    }
}

/// Level space plus one generating class per covariate slot `0..=H`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    level_space: LevelSpace,
    classes: Vec<GeneratingClass>,
    index_sets: Vec<InteractionIndexSet>,
    offsets: Vec<usize>,
    design: OnceLock<DesignTable>,
}

impl PartialEq for ModelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.level_space == other.level_space && self.classes == other.classes
    }
}

impl ModelSpec {
    /// `classes[0]` is the baseline class, `classes[h]` the slope class of `x^h`.
    pub fn new(level_space: LevelSpace, classes: Vec<GeneratingClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation(
                "a model needs at least the baseline generating class".into(),
            ));
        }
        let p = level_space.vertex_count();
        for (h, class) in classes.iter().enumerate() {
            if let Some(v) = class.max_vertex().filter(|&v| v >= p) {
                return Err(Error::Validation(format!(
                    "slot {h} references vertex {v}, the model has {p} vertices"
                )));
            }
        }
        let index_sets: Vec<InteractionIndexSet> = classes
            .iter()
            .map(|class| InteractionIndexSet::new(&level_space, class))
            .collect();
        let mut offsets = Vec::with_capacity(index_sets.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for set in &index_sets {
            total += set.len();
            offsets.push(total);
        }
        Ok(Self {
            level_space,
            classes,
            index_sets,
            offsets,
            design: OnceLock::new(),
        })
    }

    pub fn level_space(&self) -> &LevelSpace {
        &self.level_space
    }

    pub fn vertex_count(&self) -> usize {
        self.level_space.vertex_count()
    }

    /// `H`, the number of covariates.
    pub fn covariate_count(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn slot_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, h: usize) -> &GeneratingClass {
        &self.classes[h]
    }

    pub fn classes(&self) -> &[GeneratingClass] {
        &self.classes
    }

    pub fn index_set(&self, h: usize) -> &InteractionIndexSet {
        &self.index_sets[h]
    }

    /// Total parameter dimension `sum_h |J_h|`.
    pub fn dimension(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Offset of slot `h` in the flat parameter vector.
    pub fn offset(&self, h: usize) -> usize {
        self.offsets[h]
    }

    /// Slot and in-slot position of flat parameter `k`.
    pub fn locate(&self, k: usize) -> (usize, usize) {
        let h = self.offsets.partition_point(|&o| o <= k) - 1;
        (h, k - self.offsets[h])
    }

    /// Human-readable label for flat parameter `k`, e.g. `"110@1"`.
    pub fn parameter_label(&self, k: usize) -> String {
        let (h, j) = self.locate(k);
        format!("{}@{h}", self.index_sets[h].cells()[j])
    }

    /// True when every `J_h` of `self` is contained in the matching `J_h` of `full`.
    pub fn is_nested_in(&self, full: &ModelSpec) -> bool {
        self.level_space == full.level_space
            && self.classes.len() == full.classes.len()
            && self
                .classes
                .iter()
                .zip(&full.classes)
                .all(|(null, full)| null.is_subclass_of(full))
    }

    /// Positions in `J_h` of the entries `j ◁ cell`, found by enumerating the
    /// generating-class members inside `S(cell)`.
    pub fn active_terms(&self, h: usize, cell: &Cell) -> Vec<usize> {
        let support = cell.support();
        let index_set = &self.index_sets[h];
        self.classes[h]
            .sets()
            .iter()
            .filter(|set| set.iter().all(|v| support.binary_search(v).is_ok()))
            .filter_map(|set| index_set.position(&cell.restrict(set)))
            .collect()
    }

    pub(crate) fn design(&self) -> Result<&DesignTable> {
        let cells = self.level_space.exact_cell_count()?;
        Ok(self.design.get_or_init(|| DesignTable::build(self, cells)))
    }

    fn check_conforming(&self, theta: &ParameterSet) -> Result<()> {
        if theta.blocks.len() != self.slot_count() {
            return Err(Error::Dimension(format!(
                "parameter set has {} blocks, model has {} slots",
                theta.blocks.len(),
                self.slot_count()
            )));
        }
        for (h, block) in theta.blocks.iter().enumerate() {
            if block.len() != self.index_sets[h].len() {
                return Err(Error::Dimension(format!(
                    "block {h} has length {}, J_{h} has {} entries",
                    block.len(),
                    self.index_sets[h].len()
                )));
            }
        }
        Ok(())
    }

    fn check_covariates(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.covariate_count() {
            return Err(Error::Dimension(format!(
                "covariate vector has length {}, model has H = {}",
                x.len(),
                self.covariate_count()
            )));
        }
        Ok(())
    }

    fn check_data(&self, data: &ObservationSet) -> Result<()> {
        if data.level_space != self.level_space {
            return Err(Error::Dimension(
                "observations and model use different level spaces".into(),
            ));
        }
        if data.covariate_count != self.covariate_count() {
            return Err(Error::Dimension(format!(
                "observations carry {} covariates, model has H = {}",
                data.covariate_count,
                self.covariate_count()
            )));
        }
        Ok(())
    }
}

/// Sparse form of the design matrices `F_0..F_H`: for every cell, the flat
/// parameter indices that are active.
#[derive(Debug, Clone)]
pub(crate) struct DesignTable {
    row_start: Vec<usize>,
    entries: Vec<u32>,
    slot_of: Vec<usize>,
}

impl DesignTable {
    fn build(spec: &ModelSpec, cells: usize) -> Self {
        let mut row_start = Vec::with_capacity(cells + 1);
        let mut entries = Vec::new();
        row_start.push(0);
        for index in 0..cells {
            let cell = spec.level_space.cell_at(index);
            for h in 0..spec.slot_count() {
                let offset = spec.offset(h);
                entries.extend(
                    spec.active_terms(h, &cell)
                        .into_iter()
                        .map(|j| (offset + j) as u32),
                );
            }
            row_start.push(entries.len());
        }
        let slot_of = (0..spec.dimension()).map(|k| spec.locate(k).0).collect();
        Self {
            row_start,
            entries,
            slot_of,
        }
    }

    pub(crate) fn cell_count(&self) -> usize {
        self.row_start.len() - 1
    }

    pub(crate) fn row(&self, cell: usize) -> &[u32] {
        &self.entries[self.row_start[cell]..self.row_start[cell + 1]]
    }

    pub(crate) fn slot_of(&self, k: usize) -> usize {
        self.slot_of[k]
    }

    /// `z_i(x)` for every cell, given the flat parameter vector.
    pub(crate) fn log_weights(&self, flat: &[f64], x: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = flat
            .iter()
            .zip(&self.slot_of)
            .map(|(&theta, &h)| theta * covariate_power(x, h))
            .collect();
        (0..self.cell_count())
            .map(|i| self.row(i).iter().map(|&k| scaled[k as usize]).sum())
            .collect()
    }
}

/// `x^h` with the convention `x^0 = 1`.
#[inline]
pub(crate) fn covariate_power(x: &[f64], h: usize) -> f64 {
    if h == 0 {
        1.0
    } else {
        x[h - 1]
    }
}

/// Canonical parameters `theta_0..theta_H`, aligned with `J_0..J_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    blocks: Vec<Vec<f64>>,
}

impl ParameterSet {
    pub fn new(spec: &ModelSpec, blocks: Vec<Vec<f64>>) -> Result<Self> {
        let theta = Self { blocks };
        spec.check_conforming(&theta)?;
        if theta.blocks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("parameters must be finite".into()));
        }
        Ok(theta)
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            blocks: (0..spec.slot_count())
                .map(|h| vec![0.0; spec.index_set(h).len()])
                .collect(),
        }
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.dimension() {
            return Err(Error::Dimension(format!(
                "flat parameter vector has length {}, model dimension is {}",
                flat.len(),
                spec.dimension()
            )));
        }
        let blocks = (0..spec.slot_count())
            .map(|h| flat[spec.offset(h)..spec.offset(h + 1)].to_vec())
            .collect();
        Self::new(spec, blocks)
    }

    pub fn block(&self, h: usize) -> &[f64] {
        &self.blocks[h]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn dimension(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// `f_{h,i}` by the definition: one entry per `j in J_h`, set iff `j ◁ i`.
pub fn design_vector(spec: &ModelSpec, h: usize, cell: &Cell) -> Result<Vec<u8>> {
    if h >= spec.slot_count() {
        return Err(Error::Dimension(format!(
            "slot {h} out of range 0..={}",
            spec.covariate_count()
        )));
    }
    spec.level_space.check_cell(cell)?;
    spec.index_set(h)
        .cells()
        .iter()
        .map(|j| left_of(j, cell).map(u8::from))
        .collect()
}

/// `z_i(x)` for every cell in canonical order; `z_0 = 0`.
pub fn cell_log_weights(spec: &ModelSpec, theta: &ParameterSet, x: &[f64]) -> Result<Vec<f64>> {
    spec.check_conforming(theta)?;
    spec.check_covariates(x)?;
    let design = spec.design()?;
    Ok(design.log_weights(&theta.flat(), x))
}

/// `p(i | x)` for every cell, normalized with max subtraction.
pub fn cell_probabilities(spec: &ModelSpec, theta: &ParameterSet, x: &[f64]) -> Result<Vec<f64>> {
    let z = cell_log_weights(spec, theta, x)?;
    Ok(softmax(&z))
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = z.iter().map(|&zi| (zi - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|&zi| (zi - max).exp()).sum::<f64>().ln()
}

/// A single observation: a cell together with its covariates `x^1..x^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub cell: Cell,
    pub covariates: Vec<f64>,
}

/// `n` rows of (cell, covariates).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    level_space: LevelSpace,
    covariate_count: usize,
    rows: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(level_space: LevelSpace, covariate_count: usize) -> Self {
        Self {
            level_space,
            covariate_count,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(
        level_space: LevelSpace,
        covariate_count: usize,
        rows: impl IntoIterator<Item = (Cell, Vec<f64>)>,
    ) -> Result<Self> {
        let mut data = Self::new(level_space, covariate_count);
        for (cell, x) in rows {
            data.push(cell, x)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, cell: Cell, covariates: Vec<f64>) -> Result<()> {
        self.level_space.check_cell(&cell)?;
        if covariates.len() != self.covariate_count {
            return Err(Error::Dimension(format!(
                "observation has {} covariates, expected {}",
                covariates.len(),
                self.covariate_count
            )));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("covariates must be finite".into()));
        }
        self.rows.push(Observation { cell, covariates });
        Ok(())
    }

    pub fn level_space(&self) -> &LevelSpace {
        &self.level_space
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_count
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Group rows into (cell, covariate value, multiplicity) entries.
    pub fn to_contingency(&self) -> ContingencyTable {
        let mut entries = Vec::new();
        for group in covariate_groups(self) {
            for (cell, count) in group.cells {
                entries.push(ContingencyEntry {
                    cell,
                    covariates: group.x.clone(),
                    count,
                });
            }
        }
        ContingencyTable {
            level_space: self.level_space.clone(),
            covariate_count: self.covariate_count,
            entries,
        }
    }

    /// Expands every entry into `count` identical rows.
    pub fn from_contingency(table: &ContingencyTable) -> Result<Self> {
        let mut data = Self::new(table.level_space.clone(), table.covariate_count);
        for entry in &table.entries {
            for _ in 0..entry.count {
                data.push(entry.cell.clone(), entry.covariates.clone())?;
            }
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyEntry {
    pub cell: Cell,
    pub covariates: Vec<f64>,
    pub count: u64,
}

/// Count form of an [`ObservationSet`], ordered by covariate value then cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub level_space: LevelSpace,
    pub covariate_count: usize,
    pub entries: Vec<ContingencyEntry>,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }
}

/// Observations sharing one covariate vector.
#[derive(Debug, Clone)]
pub(crate) struct CovariateGroup {
    pub x: Vec<f64>,
    pub count: u64,
    pub cells: Vec<(Cell, u64)>,
}

/// Groups by exact covariate bit pattern. The result depends only on the
/// multiset of rows, never on their order.
pub(crate) fn covariate_groups(data: &ObservationSet) -> Vec<CovariateGroup> {
    type Counts = (Vec<f64>, BTreeMap<Cell, u64>);
    let mut groups: BTreeMap<Vec<u64>, Counts> = BTreeMap::new();
    for row in &data.rows {
        let key = row.covariates.iter().map(|x| x.to_bits()).collect();
        let entry = groups
            .entry(key)
            .or_insert_with(|| (row.covariates.clone(), BTreeMap::new()));
        *entry.1.entry(row.cell.clone()).or_insert(0) += 1;
    }
    groups
        .into_values()
        .map(|(x, cells)| CovariateGroup {
            x,
            count: cells.values().sum(),
            cells: cells.into_iter().collect(),
        })
        .collect()
}

/// `t_h = sum_m x_m^h f_{h, cell(m)}` for `h = 0..=H`.
pub fn sufficient_statistics(spec: &ModelSpec, data: &ObservationSet) -> Result<Vec<Vec<f64>>> {
    spec.check_data(data)?;
    Ok(statistics_from_groups(spec, &covariate_groups(data)))
}

pub(crate) fn statistics_from_groups(spec: &ModelSpec, groups: &[CovariateGroup]) -> Vec<Vec<f64>> {
    let mut stats: Vec<Vec<f64>> = (0..spec.slot_count())
        .map(|h| vec![0.0; spec.index_set(h).len()])
        .collect();
    for group in groups {
        for (cell, count) in &group.cells {
            for (h, block) in stats.iter_mut().enumerate() {
                let weight = *count as f64 * covariate_power(&group.x, h);
                for j in spec.active_terms(h, cell) {
                    block[j] += weight;
                }
            }
        }
    }
    stats
}

/// Joint log-likelihood `sum_h <theta_h, t_h> - sum_m log sum_i exp z_i(x_m)`.
pub fn log_likelihood(spec: &ModelSpec, theta: &ParameterSet, data: &ObservationSet) -> Result<f64> {
    spec.check_conforming(theta)?;
    spec.check_data(data)?;
    let design = spec.design()?;
    let groups = covariate_groups(data);
    Ok(log_likelihood_grouped(spec, design, &theta.flat(), &groups))
}

pub(crate) fn log_likelihood_grouped(
    spec: &ModelSpec,
    design: &DesignTable,
    flat: &[f64],
    groups: &[CovariateGroup],
) -> f64 {
    let stats = statistics_from_groups(spec, groups);
    let linear: f64 = stats.iter().flatten().zip(flat).map(|(t, th)| t * th).sum();
    let normalizer: f64 = groups
        .iter()
        .map(|g| g.count as f64 * log_sum_exp(&design.log_weights(flat, &g.x)))
        .sum();
    linear - normalizer
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cell(s: &str) -> Cell {
        Cell::from_digits(s).unwrap()
    }

    /// V = {a,b,c}, Δ = {a,b,c,ab,bc}, binary.
    fn three_vertex_spec() -> ModelSpec {
        let class = GeneratingClass::from_maximal(vec![vec![0, 1], vec![1, 2]]).unwrap();
        ModelSpec::new(LevelSpace::binary(3).unwrap(), vec![class]).unwrap()
    }

    #[test]
    fn left_of_examples() {
        assert!(left_of(&cell("100"), &cell("101")).unwrap());
        assert!(left_of(&cell("000"), &cell("111")).unwrap());
        assert!(left_of(&cell("000"), &cell("010")).unwrap());
        assert!(!left_of(&cell("110"), &cell("101")).unwrap());
        assert!(matches!(left_of(&cell("10"), &cell("101")), Err(Error::Dimension(_))));
    }

    #[test]
    fn index_set_of_worked_example() {
        let spec = three_vertex_spec();
        let j: Vec<String> = spec.index_set(0).cells().iter().map(|c| c.to_string()).collect();
        assert_eq!(j, ["100", "010", "001", "110", "011"]);
        let below: Vec<String> = spec
            .index_set(0)
            .cells()
            .iter()
            .filter(|j| left_of(j, &cell("101")).unwrap())
            .map(|c| c.to_string())
            .collect();
        assert_eq!(below, ["100", "001"]);
    }

    #[test]
    fn design_vector_examples() {
        let spec = three_vertex_spec();
        assert_eq!(design_vector(&spec, 0, &cell("111")).unwrap(), vec![1; 5]);
        assert_eq!(design_vector(&spec, 0, &cell("000")).unwrap(), vec![0; 5]);
        assert_eq!(design_vector(&spec, 0, &cell("101")).unwrap(), vec![1, 0, 1, 0, 0]);
        assert!(design_vector(&spec, 1, &cell("101")).is_err());
    }

    #[test]
    fn multilevel_index_set_size_and_order() {
        let space = LevelSpace::new(vec![3, 2, 4]).unwrap();
        let class = GeneratingClass::from_maximal(vec![vec![0, 2], vec![1]]).unwrap();
        let set = InteractionIndexSet::new(&space, &class);
        // |J| = sum over D of prod (|I_v| - 1) = 2 + 1 + 3 + 2*3
        assert_eq!(set.len(), 12);
        let labels: Vec<String> = set.cells().iter().map(|c| c.to_string()).collect();
        assert_eq!(&labels[..6], ["100", "200", "010", "001", "002", "003"]);
        assert_eq!(&labels[6..], ["101", "102", "103", "201", "202", "203"]);
    }

    #[test]
    fn closure_and_rejection() {
        let closed = GeneratingClass::from_maximal(vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(
            closed.sets(),
            &[vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
        );
        assert!(is_hierarchical(closed.sets()));
        assert!(GeneratingClass::new(vec![vec![0, 1], vec![0]]).is_err());
        assert!(GeneratingClass::new(vec![vec![0, 1], vec![0], vec![1]]).is_ok());
        assert_eq!(closed.maximal_sets(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn log_weights_hand_example() {
        let class = GeneratingClass::from_maximal(vec![vec![0, 1]]).unwrap();
        let spec = ModelSpec::new(LevelSpace::binary(2).unwrap(), vec![class.clone(), class]).unwrap();
        let theta = ParameterSet::new(&spec, vec![vec![0.3, -0.2, 0.1], vec![1.0, 1.0, 1.0]]).unwrap();
        let z = cell_log_weights(&spec, &theta, &[0.5]).unwrap();
        assert_eq!(z[0], 0.0);
        assert_relative_eq!(z[3], 1.7, epsilon = 1e-14);
        assert_relative_eq!(z[1], -0.2 + 0.5, epsilon = 1e-14);
    }

    #[test]
    fn uniform_at_zero_and_ratio_identity() {
        let spec = three_vertex_spec();
        let p = cell_probabilities(&spec, &ParameterSet::zeros(&spec), &[]).unwrap();
        assert!(p.iter().all(|&pi| (pi - 0.125).abs() < 1e-15));

        let theta = ParameterSet::new(&spec, vec![vec![0.4, -1.1, 0.7, 0.2, -0.3]]).unwrap();
        let p = cell_probabilities(&spec, &theta, &[]).unwrap();
        let space = spec.level_space();
        let ratio = (p[space.cell_index(&cell("101"))] / p[0]).ln();
        assert_relative_eq!(ratio, 0.4 + 0.7, epsilon = 1e-12);
        let ratio = (p[space.cell_index(&cell("111"))] / p[0]).ln();
        assert_relative_eq!(ratio, 0.4 - 1.1 + 0.7 + 0.2 - 0.3, epsilon = 1e-12);
    }

    #[test]
    fn sufficient_statistics_examples() {
        let spec = three_vertex_spec();
        let data = ObservationSet::from_rows(spec.level_space().clone(), 0, [(cell("101"), vec![])]).unwrap();
        assert_eq!(sufficient_statistics(&spec, &data).unwrap(), vec![vec![1.0, 0.0, 1.0, 0.0, 0.0]]);

        let empty = ObservationSet::new(spec.level_space().clone(), 0);
        assert_eq!(sufficient_statistics(&spec, &empty).unwrap(), vec![vec![0.0; 5]]);

        let class = GeneratingClass::from_maximal(vec![vec![0, 1]]).unwrap();
        let spec = ModelSpec::new(LevelSpace::binary(2).unwrap(), vec![class.clone(), class]).unwrap();
        let data = ObservationSet::from_rows(
            spec.level_space().clone(),
            1,
            (0..3).map(|_| (cell("11"), vec![0.2])),
        )
        .unwrap();
        let t = sufficient_statistics(&spec, &data).unwrap();
        assert_eq!(t[0], vec![3.0; 3]);
        for value in &t[1] {
            assert_relative_eq!(*value, 0.6, epsilon = 1e-15);
        }
    }

    #[test]
    fn log_likelihood_at_zero() {
        let spec = three_vertex_spec();
        let data = ObservationSet::from_rows(
            spec.level_space().clone(),
            0,
            ["000", "101", "111", "011"].iter().map(|s| (cell(s), vec![])),
        )
        .unwrap();
        let ll = log_likelihood(&spec, &ParameterSet::zeros(&spec), &data).unwrap();
        assert_relative_eq!(ll, -4.0 * 8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn capacity_error_beyond_bound() {
        let class = GeneratingClass::from_maximal(vec![vec![0]]).unwrap();
        let spec = ModelSpec::new(LevelSpace::binary(21).unwrap(), vec![class]).unwrap();
        let err = cell_log_weights(&spec, &ParameterSet::zeros(&spec), &[]).unwrap_err();
        assert!(matches!(err, Error::Capacity { cells, .. } if cells == 1 << 21));
    }

    #[test]
    fn cell_index_round_trip() {
        let space = LevelSpace::new(vec![3, 2, 4]).unwrap();
        for index in 0..24 {
            assert_eq!(space.cell_index(&space.cell_at(index)), index);
        }
        assert_eq!(space.cell_at(0), Cell::zero(3));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(LevelSpace::new(vec![2, 1]).is_err());
        assert!(LevelSpace::new(vec![]).is_err());
        let space = LevelSpace::binary(2).unwrap();
        let class = GeneratingClass::from_maximal(vec![vec![0, 2]]).unwrap();
        assert!(ModelSpec::new(space.clone(), vec![class]).is_err());
        let mut data = ObservationSet::new(space, 1);
        assert!(data.push(cell("20"), vec![0.1]).is_err());
        assert!(data.push(cell("10"), vec![f64::NAN]).is_err());
        assert!(data.push(cell("10"), vec![]).is_err());
    }
}
