//! Score, Hessian, and damped Newton maximization of the exact joint
//! log-likelihood.
//!
//! All sums over observations are taken over groups of identical covariate
//! vectors (in bit-pattern order), so results do not depend on row order.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::loglinear::{
    covariate_groups, covariate_power, log_sum_exp, statistics_from_groups, Cell, CovariateGroup,
    DesignTable, ModelSpec, ObservationSet, ParameterSet,
};

/// Ridge added to a singular information matrix before solving.
pub const RIDGE: f64 = 1e-8;

/// Eigenvalue ratio below which the information is treated as singular.
const RANK_TOLERANCE: f64 = 1e-11;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the score.
    pub gradient_tolerance: f64,
    pub step_halving_limit: usize,
    /// Starting point; `None` starts from the uniform model `theta = 0`.
    pub initial: Option<ParameterSet>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_halving_limit: 30,
            initial: None,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance <= 0.0 {
            return Err(Error::Validation("gradient tolerance must be positive".into()));
        }
        if self.max_iterations == 0 || self.step_halving_limit == 0 {
            return Err(Error::Validation(
                "iteration and step-halving limits must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ParameterSet,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    /// Observed information `-H(theta_hat)`.
    pub information: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted step, starting with the initial point.
    pub log_likelihood_trace: Vec<f64>,
    /// Set when the information was singular and the ridge fallback was used.
    pub ridge_applied: bool,
    pub warnings: Vec<String>,
}

struct Evaluation {
    log_likelihood: f64,
    score: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

/// Precomputed pieces shared by every evaluation on one dataset.
struct Problem<'a> {
    spec: &'a ModelSpec,
    design: &'a DesignTable,
    groups: Vec<(CovariateGroup, Vec<(usize, u64)>)>,
    stats: DVector<f64>,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a ModelSpec, data: &ObservationSet) -> Result<Self> {
        if data.level_space() != spec.level_space() || data.covariate_count() != spec.covariate_count() {
            return Err(Error::Dimension(
                "observations do not conform to the model specification".into(),
            ));
        }
        let design = spec.design()?;
        let raw_groups = covariate_groups(data);
        let stats = statistics_from_groups(spec, &raw_groups);
        let stats = DVector::from_iterator(spec.dimension(), stats.into_iter().flatten());
        let space = spec.level_space();
        let groups = raw_groups
            .into_iter()
            .map(|g| {
                let indexed = g.cells.iter().map(|(c, n)| (space.cell_index(c), *n)).collect();
                (g, indexed)
            })
            .collect();
        Ok(Self {
            spec,
            design,
            groups,
            stats,
        })
    }

    fn evaluate(&self, flat: &[f64], with_hessian: bool) -> Evaluation {
        let d = self.spec.dimension();
        let mut expected = DVector::zeros(d);
        let mut hessian = with_hessian.then(|| DMatrix::zeros(d, d));
        let mut normalizer = 0.0;
        let mut marginal = vec![0.0; d];
        let mut pair = if with_hessian { vec![0.0; d * d] } else { Vec::new() };
        for (group, _) in &self.groups {
            let count = group.count as f64;
            let z = self.design.log_weights(flat, &group.x);
            let lse = log_sum_exp(&z);
            normalizer += count * lse;
            marginal.iter_mut().for_each(|m| *m = 0.0);
            pair.iter_mut().for_each(|m| *m = 0.0);
            let powers: Vec<f64> = (0..d)
                .map(|k| covariate_power(&group.x, self.design.slot_of(k)))
                .collect();
            for (i, &zi) in z.iter().enumerate() {
                let p = (zi - lse).exp();
                let row = self.design.row(i);
                for &a in row {
                    let a = a as usize;
                    let pa = p * powers[a];
                    marginal[a] += pa;
                    if with_hessian {
                        for &b in row {
                            let b = b as usize;
                            pair[a * d + b] += pa * powers[b];
                        }
                    }
                }
            }
            for k in 0..d {
                expected[k] += count * marginal[k];
            }
            if let Some(h) = hessian.as_mut() {
                for a in 0..d {
                    for b in 0..d {
                        h[(a, b)] -= count * (pair[a * d + b] - marginal[a] * marginal[b]);
                    }
                }
            }
        }
        let linear: f64 = self.stats.iter().zip(flat).map(|(t, th)| t * th).sum();
        Evaluation {
            log_likelihood: linear - normalizer,
            score: &self.stats - expected,
            hessian,
        }
    }

    fn log_likelihood(&self, flat: &[f64]) -> f64 {
        let normalizer: f64 = self
            .groups
            .iter()
            .map(|(g, _)| g.count as f64 * log_sum_exp(&self.design.log_weights(flat, &g.x)))
            .sum();
        let linear: f64 = self.stats.iter().zip(flat).map(|(t, th)| t * th).sum();
        linear - normalizer
    }
}

fn flat_index(spec: &ModelSpec, j: &Cell, h: usize) -> Result<usize> {
    if h >= spec.slot_count() {
        return Err(Error::Dimension(format!("slot {h} out of range")));
    }
    spec.index_set(h)
        .position(j)
        .map(|pos| spec.offset(h) + pos)
        .ok_or_else(|| Error::Validation(format!("cell {j} is not in J_{h}")))
}

/// `P_{j,h}(theta | x) = x^h * sum_{i : j ◁ i} p(i | x)`.
pub fn marginal_prob(spec: &ModelSpec, theta: &ParameterSet, x: &[f64], j: &Cell, h: usize) -> Result<f64> {
    let a = flat_index(spec, j, h)?;
    let p = crate::loglinear::cell_probabilities(spec, theta, x)?;
    let design = spec.design()?;
    let mass: f64 = (0..design.cell_count())
        .filter(|&i| design.row(i).contains(&(a as u32)))
        .map(|i| p[i])
        .sum();
    Ok(mass * covariate_power(x, h))
}

/// `P_{j,k,h,h'}(theta | x) = x^h x^{h'} * sum_{i : j ◁ i, k ◁ i} p(i | x)`.
#[allow(clippy::too_many_arguments)]
pub fn marginal_prob_pair(
    spec: &ModelSpec,
    theta: &ParameterSet,
    x: &[f64],
    j: &Cell,
    h: usize,
    k: &Cell,
    h2: usize,
) -> Result<f64> {
    let a = flat_index(spec, j, h)? as u32;
    let b = flat_index(spec, k, h2)? as u32;
    let p = crate::loglinear::cell_probabilities(spec, theta, x)?;
    let design = spec.design()?;
    let mass: f64 = (0..design.cell_count())
        .filter(|&i| design.row(i).contains(&a) && design.row(i).contains(&b))
        .map(|i| p[i])
        .sum();
    Ok(mass * covariate_power(x, h) * covariate_power(x, h2))
}

fn check_theta(spec: &ModelSpec, theta: &ParameterSet) -> Result<Vec<f64>> {
    // Round-trip through the validating constructor to check the layout.
    ParameterSet::new(spec, theta.blocks().to_vec()).map(|t| t.flat())
}

/// Score vector, blocks concatenated in slot order `h = 0..=H`.
pub fn score(spec: &ModelSpec, theta: &ParameterSet, data: &ObservationSet) -> Result<DVector<f64>> {
    let flat = check_theta(spec, theta)?;
    let problem = Problem::new(spec, data)?;
    Ok(problem.evaluate(&flat, false).score)
}

/// Hessian of the joint log-likelihood.
pub fn hessian(spec: &ModelSpec, theta: &ParameterSet, data: &ObservationSet) -> Result<DMatrix<f64>> {
    let flat = check_theta(spec, theta)?;
    let problem = Problem::new(spec, data)?;
    Ok(problem.evaluate(&flat, true).hessian.unwrap())
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Whether a symmetric positive semidefinite matrix is numerically singular.
pub(crate) fn is_rank_deficient(matrix: &DMatrix<f64>) -> bool {
    if matrix.nrows() == 0 {
        return false;
    }
    let eigen = SymmetricEigen::new(matrix.clone());
    let max = eigen.eigenvalues.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    let min = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    max == 0.0 || min <= RANK_TOLERANCE * max
}

/// Solves `information * step = score`, falling back to a ridge when the
/// information is singular. Returns the step and whether the ridge was used.
pub(crate) fn newton_step(
    information: &DMatrix<f64>,
    score: &DVector<f64>,
) -> Option<(DVector<f64>, bool)> {
    let singular = is_rank_deficient(information);
    if !singular {
        if let Some(chol) = information.clone().cholesky() {
            return Some((chol.solve(score), false));
        }
    }
    let n = information.nrows();
    let scale = information.diagonal().iter().fold(1.0f64, |acc, d| acc.max(d.abs()));
    let ridged = information + DMatrix::identity(n, n) * (RIDGE * scale);
    if let Some(chol) = ridged.clone().cholesky() {
        return Some((chol.solve(score), true));
    }
    ridged.lu().solve(score).map(|step| (step, true))
}

/// Damped Newton maximization from `theta = 0` (or the supplied start).
pub fn newton_fit(spec: &ModelSpec, data: &ObservationSet, options: &FitOptions) -> Result<FitResult> {
    options.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("cannot fit a model to an empty dataset".into()));
    }
    let problem = Problem::new(spec, data)?;
    let n = data.len() as f64;
    let mut warnings = Vec::new();
    for (pos, &t) in problem.stats.iter().take(spec.index_set(0).len()).enumerate() {
        if t == 0.0 || t == n {
            let message = format!(
                "sufficient statistic of {} is {t}; the estimate may diverge",
                spec.parameter_label(pos)
            );
            warn!("{message}");
            warnings.push(message);
        }
    }

    let mut flat = match &options.initial {
        Some(initial) => check_theta(spec, initial)?,
        None => vec![0.0; spec.dimension()],
    };
    let mut current = problem.evaluate(&flat, true);
    let mut trace = vec![current.log_likelihood];
    let mut ridge_applied = false;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        if !current.log_likelihood.is_finite() {
            return Err(Error::Numerical(format!(
                "log-likelihood became non-finite at iteration {iterations}"
            )));
        }
        if sup_norm(&current.score) <= options.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= options.max_iterations {
            break;
        }
        iterations += 1;
        let information = -current.hessian.take().unwrap();
        let Some((step, ridged)) = newton_step(&information, &current.score) else {
            return Err(Error::Numerical(format!(
                "Newton system could not be solved at iteration {iterations}"
            )));
        };
        if ridged && !ridge_applied {
            let message = "information matrix is singular; applied ridge adjustment \
                           (degenerate design, e.g. a constant covariate)"
                .to_string();
            warn!("{message}");
            warnings.push(message);
        }
        ridge_applied |= ridged;

        // Non-decrease up to the rounding noise of the objective itself.
        let slack = 1e-12 * current.log_likelihood.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=options.step_halving_limit {
            let candidate: Vec<f64> = flat.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            let ll = problem.log_likelihood(&candidate);
            if ll.is_finite() && ll >= current.log_likelihood - slack {
                accepted = Some(candidate);
                break;
            }
            scale *= 0.5;
        }
        let Some(candidate) = accepted else {
            let message = format!("step halving exhausted at iteration {iterations}");
            warn!("{message}");
            warnings.push(message);
            current.hessian = Some(-information);
            break;
        };
        flat = candidate;
        current = problem.evaluate(&flat, true);
        trace.push(current.log_likelihood);
    }

    let information = -current
        .hessian
        .unwrap_or_else(|| problem.evaluate(&flat, true).hessian.unwrap());
    Ok(FitResult {
        theta: ParameterSet::from_flat(spec, &flat)?,
        converged,
        iterations,
        score_norm: sup_norm(&current.score),
        information,
        log_likelihood: current.log_likelihood,
        log_likelihood_trace: trace,
        ridge_applied,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loglinear::{GeneratingClass, LevelSpace};
    use approx::assert_relative_eq;

    fn single_vertex(ones: usize, n: usize) -> (ModelSpec, ObservationSet) {
        let class = GeneratingClass::from_maximal(vec![vec![0]]).unwrap();
        let spec = ModelSpec::new(LevelSpace::binary(1).unwrap(), vec![class]).unwrap();
        let rows = (0..n).map(|m| (Cell::new(vec![usize::from(m < ones)]), vec![]));
        let data = ObservationSet::from_rows(spec.level_space().clone(), 0, rows).unwrap();
        (spec, data)
    }

    fn g2(h: usize) -> ModelSpec {
        let class = GeneratingClass::from_maximal(vec![vec![0, 1]]).unwrap();
        ModelSpec::new(LevelSpace::binary(2).unwrap(), vec![class; h + 1]).unwrap()
    }

    #[test]
    fn balanced_bernoulli_fits_zero() {
        let (spec, data) = single_vertex(50, 100);
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.theta.block(0)[0].abs() < 1e-12);
    }

    #[test]
    fn bernoulli_log_odds() {
        let (spec, data) = single_vertex(73, 100);
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.score_norm <= 1e-8);
        assert_relative_eq!(fit.theta.block(0)[0], (73.0f64 / 27.0).ln(), epsilon = 1e-9);
        assert_relative_eq!(fit.theta.block(0)[0], 0.99462, epsilon = 1e-5);
    }

    #[test]
    fn marginal_probabilities_at_uniform() {
        let spec = g2(1);
        let theta = ParameterSet::zeros(&spec);
        let a = Cell::from_digits("10").unwrap();
        let b = Cell::from_digits("01").unwrap();
        let ab = Cell::from_digits("11").unwrap();
        assert_relative_eq!(marginal_prob(&spec, &theta, &[0.5], &a, 0).unwrap(), 0.5);
        assert_relative_eq!(marginal_prob(&spec, &theta, &[0.5], &ab, 0).unwrap(), 0.25);
        assert_relative_eq!(marginal_prob(&spec, &theta, &[0.5], &a, 1).unwrap(), 0.25);
        assert_relative_eq!(marginal_prob_pair(&spec, &theta, &[0.5], &a, 0, &b, 0).unwrap(), 0.25);
        assert!(marginal_prob(&spec, &theta, &[0.5], &Cell::zero(2), 0).is_err());
    }

    #[test]
    fn pair_reduces_on_diagonal_and_is_symmetric() {
        let spec = g2(1);
        let theta = ParameterSet::new(&spec, vec![vec![0.3, -0.8, 1.2], vec![-0.4, 0.9, 0.1]]).unwrap();
        let x = [0.7];
        let a = Cell::from_digits("10").unwrap();
        let ab = Cell::from_digits("11").unwrap();
        for h in 0..2 {
            let single = marginal_prob(&spec, &theta, &x, &a, h).unwrap();
            let diag = marginal_prob_pair(&spec, &theta, &x, &a, h, &a, h).unwrap();
            let power = if h == 0 { 1.0 } else { x[0] };
            assert_relative_eq!(diag, power * single, epsilon = 1e-15);
        }
        let forward = marginal_prob_pair(&spec, &theta, &x, &a, 0, &ab, 1).unwrap();
        let backward = marginal_prob_pair(&spec, &theta, &x, &ab, 1, &a, 0).unwrap();
        assert_eq!(forward, backward);
    }

    #[test]
    fn score_single_observation_at_uniform() {
        let spec = g2(0);
        let data = ObservationSet::from_rows(
            spec.level_space().clone(),
            0,
            [(Cell::from_digits("11").unwrap(), vec![])],
        )
        .unwrap();
        let s = score(&spec, &ParameterSet::zeros(&spec), &data).unwrap();
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s[2], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn empty_data_gives_zero_hessian_and_refuses_fit() {
        let spec = g2(1);
        let data = ObservationSet::new(spec.level_space().clone(), 1);
        let h = hessian(&spec, &ParameterSet::zeros(&spec), &data).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(newton_fit(&spec, &data, &FitOptions::default()).is_err());
    }

    #[test]
    fn constant_covariate_triggers_ridge() {
        let spec = g2(1);
        let rows = ["00", "10", "01", "11", "11", "10"]
            .iter()
            .map(|s| (Cell::from_digits(s).unwrap(), vec![0.5]));
        let data = ObservationSet::from_rows(spec.level_space().clone(), 1, rows).unwrap();
        let fit = newton_fit(&spec, &data, &FitOptions::default()).unwrap();
        assert!(fit.ridge_applied);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn invalid_options_rejected() {
        let options = FitOptions {
            gradient_tolerance: 0.0,
            ..FitOptions::default()
        };
        assert!(options.validate().is_err());
        let options = FitOptions {
            max_iterations: 0,
            ..FitOptions::default()
        };
        assert!(options.validate().is_err());
    }
}
