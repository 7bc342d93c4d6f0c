//! Standard errors, Wald tests and likelihood-ratio tests built on
//! [`newton_fit`](crate::mle::newton_fit).

use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::loglinear::{ModelSpec, ObservationSet};
use crate::mle::{is_rank_deficient, newton_fit, FitOptions, FitResult};

/// Slack tolerated on a negative likelihood-ratio statistic before warning.
pub const LRT_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Wald,
    LikelihoodRatio,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestKind::Wald => f.write_str("wald"),
            TestKind::LikelihoodRatio => f.write_str("lrt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub kind: TestKind,
    pub null: String,
    pub warnings: Vec<String>,
}

impl TestResult {
    fn new(kind: TestKind, statistic: f64, degrees_of_freedom: usize, null: String) -> Self {
        Self {
            statistic,
            degrees_of_freedom,
            p_value: chi_square_upper_tail(statistic, degrees_of_freedom),
            kind,
            null,
            warnings: Vec::new(),
        }
    }

    pub fn rejects_at(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// `P(X > x)` for `X ~ chi^2_df`, i.e. `Q(df/2, x/2)`.
pub fn chi_square_upper_tail(x: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-square needs positive degrees of freedom");
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Indices carrying the weight of near-null eigenvectors of `information`.
fn non_identified(information: &DMatrix<f64>) -> Vec<usize> {
    let eigen = SymmetricEigen::new(information.clone());
    let max = eigen.eigenvalues.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    let mut indices = Vec::new();
    for (e, &value) in eigen.eigenvalues.iter().enumerate() {
        if value <= 1e-11 * max.max(f64::MIN_POSITIVE) {
            for (k, component) in eigen.eigenvectors.column(e).iter().enumerate() {
                if component.abs() > 0.1 && !indices.contains(&k) {
                    indices.push(k);
                }
            }
        }
    }
    indices.sort_unstable();
    indices
}

/// Inverse observed information `I_n(theta_hat)^{-1}`.
pub fn asymptotic_covariance(fit: &FitResult) -> Result<DMatrix<f64>> {
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            score_norm: fit.score_norm,
            detail: "covariance requires a converged fit".into(),
        });
    }
    if is_rank_deficient(&fit.information) {
        return Err(Error::SingularInformation {
            indices: non_identified(&fit.information),
        });
    }
    let chol = fit.information.clone().cholesky().ok_or_else(|| Error::SingularInformation {
        indices: non_identified(&fit.information),
    })?;
    let inverse = chol.inverse();
    // Symmetrize away rounding asymmetry.
    Ok((&inverse + inverse.transpose()) * 0.5)
}

pub fn standard_errors(fit: &FitResult) -> Result<Vec<f64>> {
    Ok(asymptotic_covariance(fit)?.diagonal().iter().map(|v| v.sqrt()).collect())
}

/// Wald test of `theta_S = 0` for flat parameter indices `S`.
pub fn wald_test(fit: &FitResult, indices: &[usize]) -> Result<TestResult> {
    let d = fit.theta.dimension();
    if indices.is_empty() {
        return Err(Error::Validation("Wald test needs at least one parameter".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&k| k >= d) {
        return Err(Error::Dimension(format!("parameter index {bad} exceeds dimension {d}")));
    }
    let mut contrasts = DMatrix::zeros(indices.len(), d);
    for (row, &k) in indices.iter().enumerate() {
        contrasts[(row, k)] = 1.0;
    }
    let null = format!("theta{indices:?} = 0");
    wald_linear(fit, &contrasts, null)
}

/// Wald test of `C theta = 0` for a full-row-rank contrast matrix `C`.
pub fn wald_linear(fit: &FitResult, contrasts: &DMatrix<f64>, null: String) -> Result<TestResult> {
    let d = fit.theta.dimension();
    if contrasts.ncols() != d || contrasts.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "contrast matrix is {}x{}, expected r x {d} with r >= 1",
            contrasts.nrows(),
            contrasts.ncols()
        )));
    }
    let cov = asymptotic_covariance(fit)?;
    let estimate = contrasts * DVector::from_vec(fit.theta.flat());
    let sub = contrasts * cov * contrasts.transpose();
    let chol = sub
        .cholesky()
        .ok_or_else(|| Error::Numerical("contrast covariance is singular".into()))?;
    let statistic = estimate.dot(&chol.solve(&estimate));
    Ok(TestResult::new(TestKind::Wald, statistic, contrasts.nrows(), null))
}

/// Wald test that slot `h` carries no effect, `theta_h = 0`.
pub fn wald_test_slot(spec: &ModelSpec, fit: &FitResult, h: usize) -> Result<TestResult> {
    if h >= spec.slot_count() {
        return Err(Error::Dimension(format!("slot {h} out of range")));
    }
    let indices: Vec<usize> = (spec.offset(h)..spec.offset(h + 1)).collect();
    let mut result = wald_test(fit, &indices)?;
    result.null = format!("theta_{h} = 0");
    Ok(result)
}

/// Homogeneity test `theta_1 = ... = theta_H`, as a Wald test on the
/// adjacent differences `theta_h - theta_{h+1}`. Needs `H >= 2` and identical
/// slope index sets.
pub fn homogeneity_test(spec: &ModelSpec, fit: &FitResult) -> Result<TestResult> {
    let slopes = spec.covariate_count();
    if slopes < 2 {
        return Err(Error::Validation("homogeneity needs at least two covariates".into()));
    }
    let reference = spec.index_set(1).cells();
    if (2..=slopes).any(|h| spec.index_set(h).cells() != reference) {
        return Err(Error::Validation(
            "homogeneity requires every slope slot to share one generating class".into(),
        ));
    }
    let width = reference.len();
    let mut contrasts = DMatrix::zeros((slopes - 1) * width, spec.dimension());
    for h in 1..slopes {
        for j in 0..width {
            let row = (h - 1) * width + j;
            contrasts[(row, spec.offset(h) + j)] = 1.0;
            contrasts[(row, spec.offset(h + 1) + j)] = -1.0;
        }
    }
    wald_linear(fit, &contrasts, format!("theta_1 = ... = theta_{slopes}"))
}

/// Likelihood-ratio test of `null` nested in `full`: `2 (l_full - l_null)`
/// against `chi^2_k` with `k` the dimension difference.
pub fn lrt(
    full: &ModelSpec,
    null: &ModelSpec,
    data: &ObservationSet,
    options: &FitOptions,
) -> Result<TestResult> {
    if !null.is_nested_in(full) {
        return Err(Error::Validation("null model is not nested in the full model".into()));
    }
    let fit = |spec: &ModelSpec, label: &str| -> Result<FitResult> {
        let mut opts = options.clone();
        opts.initial = None;
        let fit = newton_fit(spec, data, &opts)?;
        if !fit.converged {
            return Err(Error::NotConverged {
                iterations: fit.iterations,
                score_norm: fit.score_norm,
                detail: format!("{label} model fit"),
            });
        }
        Ok(fit)
    };
    let full_fit = fit(full, "full")?;
    let null_fit = fit(null, "null")?;
    let raw = 2.0 * (full_fit.log_likelihood - null_fit.log_likelihood);
    let df = full.dimension() - null.dimension();
    let description = describe_null(full, null);
    if df == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            degrees_of_freedom: 0,
            p_value: 1.0,
            kind: TestKind::LikelihoodRatio,
            null: description,
            warnings: Vec::new(),
        });
    }
    let mut result = TestResult::new(TestKind::LikelihoodRatio, raw.max(0.0), df, description);
    if raw < 0.0 {
        let message = format!("negative likelihood-ratio statistic {raw:e} clamped to 0");
        if raw < -LRT_SLACK {
            warn!("{message}");
        }
        result.warnings.push(message);
    }
    Ok(result)
}

fn describe_null(full: &ModelSpec, null: &ModelSpec) -> String {
    let dropped: Vec<String> = (0..full.slot_count())
        .flat_map(|h| {
            full.index_set(h)
                .cells()
                .iter()
                .filter(move |j| null.index_set(h).position(j).is_none())
                .map(move |j| format!("{j}@{h}"))
        })
        .collect();
    if dropped.is_empty() {
        "null equals full model".into()
    } else {
        format!("theta[{}] = 0", dropped.join(","))
    }
}
