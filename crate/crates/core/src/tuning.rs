//! Penalty calibration: a universal penalty level from the problem shape
//! alone, and joint estimation of the noise level by iterating the
//! constrained ℓ1 fit against the residual scale.
//!
//! The base level is
//!
//! ```text
//!     λ₀ = √2 · Φ⁻¹(1 − k/p) / √n,
//! ```
//!
//! where `k` solves the fixed-point equation
//!
//! ```text
//!     k = L⁴ + 2L²,     L = Φ⁻¹(1 − k/p),
//! ```
//!
//! balancing the expected number of spurious coordinates against the tail
//! level. The noise scale is then estimated jointly with the fit:
//!
//! ```text
//!     λ ← λ₀ σ̂,     β̂ ← argmin (1/2n)‖y − Z̃β‖² + λ‖β‖₁  s.t. Cᵀβ = 0,
//!     σ̂² ← ‖y − Z̃β̂‖²/n,
//! ```
//!
//! iterated to a fixed point. The interval-constraint level used by the
//! de-biasing step is tied to the same calibration as `γ = λ₀/3`.

use serde::{Deserialize, Serialize};

use crate::cdmm::{self, CdmmSettings, Coefficients, FitResult};
use crate::error::{Error, Result};
use crate::model::RegressionProblem;
use crate::normal;

/// Lower bound kept under σ̂ so the penalty never collapses to zero; fits
/// that hit it are flagged, not silently accepted.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Solves `k = L⁴(k/p) + 2L²(k/p)` with `L(t) = Φ⁻¹(1 − t)` by bisection.
/// The left side increases and the right side decreases in `k`, so the
/// root in `(0, p/2)` is unique.
pub fn solve_k(p: usize) -> Result<f64> {
    if p < 2 {
        return Err(Error::InvalidInput(format!(
            "penalty calibration needs at least 2 components, got {p}"
        )));
    }
    let pf = p as f64;
    let gap = |k: f64| -> f64 {
        let l = normal::quantile(1.0 - k / pf).expect("k/p stays inside (0, 1/2]");
        k - (l.powi(4) + 2.0 * l.powi(2))
    };
    let mut lo = 1e-12;
    let mut hi = pf / 2.0;
    debug_assert!(gap(lo) < 0.0 && gap(hi) > 0.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Universal penalty level `λ₀ = √2 Φ⁻¹(1 − k/p) / √n`.
pub fn lambda0(n: usize, p: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("penalty calibration needs n ≥ 1".into()));
    }
    let k = solve_k(p)?;
    let l = normal::quantile(1.0 - k / p as f64)?;
    Ok(std::f64::consts::SQRT_2 * l / (n as f64).sqrt())
}

/// Controls for the joint scale/fit iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledLassoSettings {
    /// Relative change in σ̂ below which the iteration stops.
    pub tol_sigma: f64,
    /// Cap on σ̂ updates.
    pub max_iterations: usize,
    /// Inner solver controls; its `lambda` field is overwritten each
    /// iteration with `λ₀ σ̂`.
    pub solver: CdmmSettings,
}

impl Default for ScaledLassoSettings {
    fn default() -> Self {
        Self { tol_sigma: 1e-6, max_iterations: 100, solver: CdmmSettings::default() }
    }
}

/// Joint fit of coefficients and noise scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledLassoResult {
    pub fit: FitResult,
    /// Estimated noise standard deviation at the fixed point.
    pub sigma: f64,
    /// Penalty level actually used for the final fit (`λ₀ σ̂`).
    pub lambda: f64,
    /// Universal base level for this problem shape.
    pub lambda0: f64,
    /// Interval-constraint level for downstream de-biasing, `λ₀/3`.
    pub gamma: f64,
    /// Number of σ̂ updates performed.
    pub n_iterations: usize,
    /// True when σ̂ collapsed to the floor (degenerate fit; residuals are
    /// numerically zero).
    pub sigma_floored: bool,
    /// True when the σ̂ iteration reached its tolerance and every inner
    /// fit converged.
    pub converged: bool,
}

/// Runs the joint scale/fit iteration to its fixed point, warm-starting
/// each inner solve from the previous one.
pub fn scaled_lasso(
    problem: &RegressionProblem,
    settings: &ScaledLassoSettings,
) -> Result<ScaledLassoResult> {
    let n = problem.n();
    let nf = n as f64;
    let lam0 = lambda0(n, problem.p())?;
    let gamma = lam0 / 3.0;

    let mut sigma = (problem.response().norm_squared() / nf).sqrt();
    let mut floored = false;
    if sigma < SIGMA_FLOOR {
        sigma = SIGMA_FLOOR;
        floored = true;
    }

    let mut warm: Option<Coefficients> = None;
    let mut all_inner_converged = true;
    let mut reached_fixed_point = false;
    let mut last: Option<FitResult> = None;
    let mut n_iterations = 0usize;

    for _ in 0..settings.max_iterations {
        let solver = CdmmSettings { lambda: lam0 * sigma, ..settings.solver.clone() };
        let fit = match &warm {
            Some(w) => cdmm::fit_warm(problem, &solver, w)?,
            None => cdmm::fit(problem, &solver)?,
        };
        all_inner_converged &= fit.converged;
        n_iterations += 1;

        // (1/2n)‖resid‖² is half the mean squared residual.
        let mean_square = 2.0 * (fit.objective - fit.lambda * l1_norm(&fit.coefficients));
        let mut next_sigma = mean_square.max(0.0).sqrt();
        if next_sigma < SIGMA_FLOOR {
            next_sigma = SIGMA_FLOOR;
            floored = true;
        }
        warm = Some(fit.coefficients.clone());
        last = Some(fit);

        if (next_sigma - sigma).abs() <= settings.tol_sigma * sigma {
            sigma = next_sigma;
            reached_fixed_point = true;
            break;
        }
        sigma = next_sigma;
    }

    let fit = last.expect("max_iterations is validated to be at least 1");
    Ok(ScaledLassoResult {
        lambda: fit.lambda,
        fit,
        sigma,
        lambda0: lam0,
        gamma,
        n_iterations,
        sigma_floored: floored,
        converged: reached_fixed_point && all_inner_converged,
    })
}

fn l1_norm(coef: &Coefficients) -> f64 {
    coef.beta.iter().map(|b| b.abs()).sum()
}
