//! Desk-scale design diagnostics: projector norms, restricted isometry
//! and restricted orthogonality constants, and eigenvalue bounds for a
//! supplied population covariance.
//!
//! For the constraint projector `P = CCᵀ`,
//!
//! ```text
//!     k₀      = ‖I − P‖_∞                      (max row ℓ₁ norm)
//!     δ⁻_k    = min_{|S| = k} λ_min(Σ̂_{S,S})
//!     δ⁺_k    = max_{|S| = k} λ_max(Σ̂_{S,S})
//!     θ_{a,b} = max_{S₁ ∩ S₂ = ∅} σ_max(Σ̂_{S₁,S₂}),  |S₁| = a, |S₂| = b,
//! ```
//!
//! where `Σ̂ = AᵀA` for a design `A` already scaled by `1/√n`. The
//! restricted constants are NP-hard in general, so they are computed by
//! exhaustive enumeration behind a hard subset budget; requests beyond
//! the budget are refused with the required count rather than
//! approximated silently.

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSet, RegressionProblem};

/// Hard cap on the number of index subsets (or subset pairs) any
/// enumeration may visit.
pub const SUBSET_CAP: u128 = 1_000_000;

/// Options controlling which optional diagnostics a report includes.
#[derive(Debug, Clone)]
pub struct DiagnosticsOptions {
    /// Order for the restricted isometry constants, if wanted.
    pub rip_k: Option<usize>,
    /// Orders `(k1, k2)` for the restricted orthogonality constant.
    pub roc_orders: Option<(usize, usize)>,
    /// Population covariance whose nonzero-eigenvalue range should be
    /// reported (a check on synthetic truths, not on data).
    pub population_cov: Option<DMatrix<f64>>,
    /// Overrides [`SUBSET_CAP`] (mainly for tests; raising it on large
    /// designs makes the enumeration infeasible in practice).
    pub subset_cap: u128,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self { rip_k: None, roc_orders: None, population_cov: None, subset_cap: SUBSET_CAP }
    }
}

/// Everything the diagnostics pass can say about a design, serialisable
/// as JSON. Optional fields are present only when requested.
///
/// The analysis constants appearing alongside these quantities in the
/// theory (absolute constants in probability bounds, the sub-Gaussian
/// norm κ) are not estimable from data; κ is reported only as a labelled
/// moment-ratio heuristic and nothing here is used as a runtime
/// threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub schema_version: u32,
    /// `‖I − P‖_∞`; equals `max_g 2(m_g − 1)/m_g` for group constraints.
    pub k0_observed: f64,
    /// `min_i (I − P)_{ii}`; strictly positive for usable constraints.
    pub cond2_min_diag: f64,
    pub rip_k: Option<usize>,
    pub rip_lower: Option<f64>,
    pub rip_upper: Option<f64>,
    pub roc_orders: Option<(usize, usize)>,
    pub roc_theta: Option<f64>,
    /// `(smallest nonzero, largest)` eigenvalue of the supplied Σ.
    pub eigen_bounds: Option<(f64, f64)>,
    /// Moment-ratio proxy for the sub-Gaussian norm of design rows:
    /// `max_j (m̂₄_j / 3)^{1/4}`. Heuristic, not an estimator.
    pub kappa_proxy: Option<f64>,
    pub notes: Vec<String>,
}

/// Max row ℓ₁ norm of `I − P`, the operator ∞-norm of the complement
/// projector. Equals 1 with no constraints and stays below 2 for group
/// constraints.
pub fn check_condition1(constraints: &ConstraintSet) -> f64 {
    let p = constraints.dim();
    let proj = constraints.projector();
    let mut worst: f64 = 0.0;
    for i in 0..p {
        let mut row_sum = 0.0;
        for j in 0..p {
            let entry = if i == j { 1.0 - proj[(i, j)] } else { -proj[(i, j)] };
            row_sum += entry.abs();
        }
        worst = worst.max(row_sum);
    }
    worst
}

/// Min diagonal of `I − P`. A vanishing entry means the constraints pin
/// that coefficient to zero, which breaks the per-coordinate variance
/// bound, so it is an error rather than a number.
pub fn check_condition2(constraints: &ConstraintSet) -> Result<f64> {
    let diag = constraints.projector_diagonal();
    let mut min_free = f64::INFINITY;
    let mut worst_col = 0;
    for (i, &d) in diag.iter().enumerate() {
        let free = 1.0 - d;
        if free < min_free {
            min_free = free;
            worst_col = i;
        }
    }
    if min_free <= 1e-12 {
        return Err(Error::DegenerateColumn { col: worst_col });
    }
    Ok(min_free)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut value: u128 = 1;
    for i in 0..k {
        value = value.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    value
}

fn check_budget(required: u128, cap: u128) -> Result<()> {
    if required > cap {
        return Err(Error::BudgetExceeded { required, cap });
    }
    Ok(())
}

/// Exact restricted isometry constants `(δ⁻_k, δ⁺_k)` of `AᵀA` by
/// enumerating every size-`k` column subset. `design` must already carry
/// the `1/√n` scaling. Refuses when `C(p, k)` exceeds the cap.
pub fn rip_constants(design: &DMatrix<f64>, k: usize, cap: u128) -> Result<(f64, f64)> {
    let p = design.ncols();
    if k == 0 || k > p {
        return Err(Error::InvalidInput(format!(
            "restricted isometry order must be in 1..={p}, got {k}"
        )));
    }
    check_budget(binomial(p, k), cap)?;
    let gram = design.transpose() * design;

    let subsets: Vec<Vec<usize>> = (0..p).combinations(k).collect();
    let bounds = subsets
        .par_iter()
        .map(|subset| {
            let sub = gram.select_rows(subset.iter()).select_columns(subset.iter());
            let eigen = sub.symmetric_eigen();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &lambda in eigen.eigenvalues.iter() {
                lo = lo.min(lambda);
                hi = hi.max(lambda);
            }
            (lo, hi)
        })
        .reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        );
    // Eigenvalues of PSD submatrices can dip below zero only by rounding.
    Ok((bounds.0.max(0.0), bounds.1))
}

/// Exact restricted orthogonality constant `θ_{k1,k2}`: the largest
/// singular value of any `Σ̂` cross block over disjoint supports of the
/// given sizes. The budget counts support pairs.
pub fn roc_constant(design: &DMatrix<f64>, k1: usize, k2: usize, cap: u128) -> Result<f64> {
    let p = design.ncols();
    if k1 == 0 || k2 == 0 || k1 + k2 > p {
        return Err(Error::InvalidInput(format!(
            "restricted orthogonality orders need k1, k2 ≥ 1 and k1 + k2 ≤ {p}, got ({k1}, {k2})"
        )));
    }
    let required = binomial(p, k1).saturating_mul(binomial(p - k1, k2));
    check_budget(required, cap)?;
    let gram = design.transpose() * design;

    let firsts: Vec<Vec<usize>> = (0..p).combinations(k1).collect();
    let theta = firsts
        .par_iter()
        .map(|s1| {
            let complement: Vec<usize> = (0..p).filter(|j| !s1.contains(j)).collect();
            let mut local: f64 = 0.0;
            for s2 in complement.iter().copied().combinations(k2) {
                let block = gram.select_rows(s1.iter()).select_columns(s2.iter());
                let sigma_max = block.singular_values().max();
                local = local.max(sigma_max);
            }
            local
        })
        .reduce(|| 0.0, f64::max);
    Ok(theta)
}

/// Smallest nonzero and largest eigenvalue of a symmetric matrix; rank
/// is decided at a `1e-12` relative threshold. Errs if the matrix is
/// zero or has a meaningfully negative eigenvalue.
pub fn eigen_bounds(sigma: &DMatrix<f64>) -> Result<(f64, f64)> {
    if sigma.nrows() != sigma.ncols() || sigma.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "covariance must be square and nonempty, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let symmetric = (sigma + sigma.transpose()) * 0.5;
    let eigen = symmetric.symmetric_eigen();
    let max = eigen.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::InvalidInput("covariance has no positive eigenvalue".into()));
    }
    let threshold = max * 1e-12;
    let mut min_nonzero = f64::INFINITY;
    for &lambda in eigen.eigenvalues.iter() {
        if lambda < -threshold.max(1e-10) {
            return Err(Error::InvalidInput(format!(
                "covariance has negative eigenvalue {lambda}"
            )));
        }
        if lambda > threshold && lambda < min_nonzero {
            min_nonzero = lambda;
        }
    }
    Ok((min_nonzero, max))
}

/// Moment-ratio proxy for the sub-Gaussian norm of the design rows:
/// `max_j (m̂₄_j / 3)^{1/4}` with `m̂₄_j` the empirical fourth moment of
/// column `j`. Exact for Gaussian columns, heuristic otherwise — tail
/// norms are not estimable from moments alone.
pub fn subgaussian_proxy(design: &DMatrix<f64>) -> f64 {
    let n = design.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for j in 0..design.ncols() {
        let col = design.column(j);
        let m4: f64 = col.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        worst = worst.max((m4 / 3.0).powf(0.25));
    }
    worst
}

/// Assembles a [`ConditionReport`] for a prepared regression problem.
/// The restricted constants use the stored design scaled by `1/√n`; the
/// sub-Gaussian proxy uses the unscaled (centered) design.
pub fn condition_report(
    problem: &RegressionProblem,
    options: &DiagnosticsOptions,
) -> Result<ConditionReport> {
    let constraints = problem.constraints();
    let k0_observed = check_condition1(constraints);
    let cond2_min_diag = check_condition2(constraints)?;

    let scaled = problem.design() / (problem.n() as f64).sqrt();
    let (rip_lower, rip_upper) = match options.rip_k {
        Some(k) => {
            let (lo, hi) = rip_constants(&scaled, k, options.subset_cap)?;
            (Some(lo), Some(hi))
        }
        None => (None, None),
    };
    let roc_theta = match options.roc_orders {
        Some((k1, k2)) => Some(roc_constant(&scaled, k1, k2, options.subset_cap)?),
        None => None,
    };
    let eigen = match &options.population_cov {
        Some(sigma) => Some(eigen_bounds(sigma)?),
        None => None,
    };
    let kappa_proxy = Some(subgaussian_proxy(problem.design()));

    let report = ConditionReport {
        schema_version: 1,
        k0_observed,
        cond2_min_diag,
        rip_k: options.rip_k,
        rip_lower,
        rip_upper,
        roc_orders: options.roc_orders,
        roc_theta,
        eigen_bounds: eigen,
        kappa_proxy,
        notes: vec![
            "kappa_proxy is a moment-ratio heuristic, not an estimator".into(),
            "theory-side absolute constants are proof artifacts and are not computed".into(),
        ],
    };

    let finite = report.k0_observed.is_finite()
        && report.cond2_min_diag.is_finite()
        && report.rip_lower.is_none_or(|v| v.is_finite())
        && report.rip_upper.is_none_or(|v| v.is_finite())
        && report.roc_theta.is_none_or(|v| v.is_finite())
        && report.eigen_bounds.is_none_or(|(a, b)| a.is_finite() && b.is_finite())
        && report.kappa_proxy.is_none_or(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("diagnostics report".into()));
    }
    Ok(report)
}
