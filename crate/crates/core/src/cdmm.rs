//! Constrained ℓ1 solver: cyclic coordinate descent on an augmented
//! Lagrangian, with multiplier updates between descent phases.
//!
//! The estimator is
//!
//! ```text
//!     min over β, γ   (1/2n) ‖y − Z̃ β − X γ‖²  +  λ ‖β‖₁
//!     subject to      Cᵀ β = 0,
//! ```
//!
//! handled through the augmented Lagrangian (scaled multiplier `ξ`)
//!
//! ```text
//!     L_μ(β, γ; ξ) = (1/2n) ‖y − Z̃β − Xγ‖² + λ‖β‖₁ + (μ/2) ‖Cᵀβ + ξ‖².
//! ```
//!
//! For fixed `ξ`, every coordinate has an exact minimiser
//!
//! ```text
//!     β_j ← S_λ( (1/n) z̃_jᵀ r_{−j} − μ (C_jᵀ Cᵀβ_{−j} + C_jᵀ ξ) )
//!           / ( ‖z̃_j‖²/n + μ ‖C_j‖² ),
//! ```
//!
//! where `S_λ` is soft thresholding, `r_{−j}` the residual with coordinate
//! `j`'s contribution restored, and `C_j` the `j`-th row of the constraint
//! matrix. Sweeps therefore never increase `L_μ`. Once a phase converges,
//! the multiplier step `ξ ← ξ + Cᵀβ` tightens feasibility; iterating drives
//! `‖Cᵀβ‖_∞` to zero. Extra covariates are unpenalised and unconstrained,
//! so their coordinate update is a plain least-squares step.
//!
//! The residual `r = y − Z̃β − Xγ` and the constraint values `t = Cᵀβ` are
//! maintained incrementally (refreshed at every phase start to cap drift),
//! making a full sweep `O(np + pr)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RegressionProblem;

/// Solver. Field-by-field validation happens at `fit` time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CdmmSettings {
    /// Augmented-Lagrangian weight; the default of 1 is used everywhere.
    pub mu: f64,
    /// ℓ1 penalty level on the compositional coefficients.
    pub lambda: f64,
    /// Inner convergence: largest coordinate move per sweep, relative to
    /// `max(1, ‖β‖_∞)`.
    pub tol_beta: f64,
    /// Outer convergence: largest absolute constraint value `‖Cᵀβ‖_∞`.
    pub tol_constraint: f64,
    /// Cap on multiplier updates.
    pub max_outer: usize,
    /// Cap on coordinate sweeps within one descent phase.
    pub max_sweeps: usize,
}

impl Default for CdmmSettings {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 0.0,
            tol_beta: 1e-7,
            tol_constraint: 1e-8,
            max_outer: 500,
            max_sweeps: 5000,
        }
    }
}

impl CdmmSettings {
    /// Default settings at a given penalty level.
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidInput(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tol_beta > 0.0) || !(self.tol_constraint > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidInput("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fitted coefficients: `beta` for the compositional components, `extra`
/// for unpenalised covariates (empty when the problem has none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: DVector<f64>,
    pub extra: DVector<f64>,
}

impl Coefficients {
    pub fn zeros(p: usize, n_extras: usize) -> Self {
        Self { beta: DVector::zeros(p), extra: DVector::zeros(n_extras) }
    }

    /// Indices of nonzero compositional coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect()
    }
}

/// Solver output. `converged` is false when an iteration cap was hit; the
/// fit is still returned so callers can inspect or flag it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Coefficients,
    /// Penalty level the fit was computed at.
    pub lambda: f64,
    /// Total coordinate sweeps across all descent phases.
    pub n_sweeps: usize,
    /// Number of multiplier updates performed.
    pub n_outer: usize,
    /// `‖Cᵀβ‖_∞` at exit.
    pub constraint_violation: f64,
    /// `(1/2n)‖y − Z̃β − Xγ‖² + λ‖β‖₁` at exit.
    pub objective: f64,
    pub converged: bool,
    /// Scaled multipliers `ξ` at exit (the dual estimate is `μ ξ`).
    pub dual: DVector<f64>,
}

/// Soft-thresholding operator `S_λ(t) = sign(t) · max(|t| − λ, 0)`.
pub fn soft_threshold(t: f64, lambda: f64) -> f64 {
    if t > lambda {
        t - lambda
    } else if t < -lambda {
        t + lambda
    } else {
        0.0
    }
}

/// Fits the constrained ℓ1 problem starting from zero coefficients.
pub fn fit(problem: &RegressionProblem, settings: &CdmmSettings) -> Result<FitResult> {
    fit_impl(problem, settings, None, None)
}

/// As [`fit`], but starting from previously computed coefficients. The
/// multipliers always restart at zero; only the primal point is reused.
pub fn fit_warm(
    problem: &RegressionProblem,
    settings: &CdmmSettings,
    warm: &Coefficients,
) -> Result<FitResult> {
    fit_impl(problem, settings, Some(warm), None)
}

/// As [`fit`], additionally recording the augmented-Lagrangian value after
/// every sweep as `(phase_index, value)` pairs. Within a phase the values
/// must be non-increasing; tests assert this.
pub fn fit_traced(
    problem: &RegressionProblem,
    settings: &CdmmSettings,
    trace: &mut Vec<(usize, f64)>,
) -> Result<FitResult> {
    fit_impl(problem, settings, None, Some(trace))
}

fn fit_impl(
    problem: &RegressionProblem,
    settings: &CdmmSettings,
    warm: Option<&Coefficients>,
    mut trace: Option<&mut Vec<(usize, f64)>>,
) -> Result<FitResult> {
    settings.validate()?;
    let design = problem.design();
    let y = problem.response();
    let constraints = problem.constraints();
    let c = constraints.matrix();
    let n = problem.n();
    let p = problem.p();
    let r = constraints.n_constraints();
    let n_extras = problem.n_extras();
    let mu = settings.mu;
    let lambda = settings.lambda;
    let nf = n as f64;

    // Per-column quantities: ‖z̃_j‖²/n and ‖C_j‖² (row norms of C).
    let col_sq: Vec<f64> = (0..p).map(|j| design.column(j).norm_squared() / nf).collect();
    let c_row_sq: Vec<f64> = (0..p).map(|j| c.row(j).norm_squared()).collect();
    for j in 0..p {
        if col_sq[j] + mu * c_row_sq[j] <= 0.0 {
            return Err(Error::DegenerateColumn { col: j });
        }
    }
    let extra_sq: Vec<f64> = match problem.extras() {
        Some(x) => {
            let sq: Vec<f64> = (0..x.count()).map(|q| x.values().column(q).norm_squared()).collect();
            if let Some(q) = sq.iter().position(|&v| v <= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "extra covariate {q} is constant; it cannot be fit without an intercept"
                )));
            }
            sq
        }
        None => Vec::new(),
    };

    let mut coef = match warm {
        Some(w) => {
            if w.beta.len() != p || w.extra.len() != n_extras {
                return Err(Error::InvalidInput(
                    "warm-start coefficient dimensions do not match the problem".into(),
                ));
            }
            w.clone()
        }
        None => Coefficients::zeros(p, n_extras),
    };
    let mut xi = DVector::<f64>::zeros(r);

    let mut residual = DVector::<f64>::zeros(n);
    let mut t_vals;
    let mut n_sweeps = 0usize;
    let mut n_outer = 0usize;
    let mut inner_converged = false;
    let mut violation;

    'outer: for phase in 0.. {
        // Refresh cached quantities to cap incremental drift.
        residual.copy_from(y);
        residual -= design * &coef.beta;
        if let Some(x) = problem.extras() {
            residual -= x.values() * &coef.extra;
        }
        t_vals = c.transpose() * &coef.beta;

        inner_converged = false;
        for _sweep in 0..settings.max_sweeps {
            let mut max_delta = 0.0f64;
            let mut max_abs = 0.0f64;
            for j in 0..p {
                let old = coef.beta[j];
                let gradient_part = design.column(j).dot(&residual) / nf + old * col_sq[j];
                let constraint_part = if r > 0 {
                    let c_j = c.row(j);
                    let coupling = c_j.transpose().dot(&t_vals) - old * c_row_sq[j];
                    let dual_part = c_j.transpose().dot(&xi);
                    mu * (coupling + dual_part)
                } else {
                    0.0
                };
                let numerator = gradient_part - constraint_part;
                let denominator = col_sq[j] + mu * c_row_sq[j];
                let new = soft_threshold(numerator, lambda) / denominator;
                if new != old {
                    let delta = new - old;
                    residual.axpy(-delta, &design.column(j), 1.0);
                    for k in 0..r {
                        t_vals[k] += delta * c[(j, k)];
                    }
                    coef.beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
                max_abs = max_abs.max(new.abs());
            }
            if let Some(x) = problem.extras() {
                for q in 0..x.count() {
                    let step = x.values().column(q).dot(&residual) / extra_sq[q];
                    if step != 0.0 {
                        residual.axpy(-step, &x.values().column(q), 1.0);
                        coef.extra[q] += step;
                        max_delta = max_delta.max(step.abs());
                    }
                    max_abs = max_abs.max(coef.extra[q].abs());
                }
            }
            n_sweeps += 1;
            if let Some(tr) = trace.as_deref_mut() {
                let l1: f64 = coef.beta.iter().map(|b| b.abs()).sum();
                let penalty = (&t_vals + &xi).norm_squared();
                let value = residual.norm_squared() / (2.0 * nf) + lambda * l1 + 0.5 * mu * penalty;
                tr.push((phase, value));
            }
            if max_delta <= settings.tol_beta * max_abs.max(1.0) {
                inner_converged = true;
                break;
            }
        }

        violation = if r == 0 { 0.0 } else { t_vals.amax() };
        if violation <= settings.tol_constraint && inner_converged {
            break 'outer;
        }
        if phase + 1 >= settings.max_outer {
            break 'outer;
        }
        xi += &t_vals;
        n_outer += 1;
    }

    // Exact exit quantities from fresh computations.
    let mut final_residual = y.clone();
    final_residual -= design * &coef.beta;
    if let Some(x) = problem.extras() {
        final_residual -= x.values() * &coef.extra;
    }
    let violation = constraints.max_violation(&coef.beta);
    let l1: f64 = coef.beta.iter().map(|b| b.abs()).sum();
    let objective = final_residual.norm_squared() / (2.0 * nf) + lambda * l1;
    let converged = inner_converged && violation <= settings.tol_constraint;

    Ok(FitResult {
        coefficients: coef,
        lambda,
        n_sweeps,
        n_outer,
        constraint_violation: violation,
        objective,
        converged,
        dual: xi,
    })
}

/// Largest violation of the exit stationarity conditions, for certifying a
/// fit. With `w = (1/n) Z̃ᵀ(y − Z̃β − Xγ) − μ C (Cᵀβ + ξ)`, an exact
/// solution satisfies `w_j = λ sign(β_j)` on the support, `|w_j| ≤ λ` off
/// it, and zero gradient for extra covariates; the returned value is the
/// worst gap across all conditions.
pub fn kkt_violation(problem: &RegressionProblem, result: &FitResult) -> f64 {
    let design = problem.design();
    let c = problem.constraints().matrix();
    let nf = problem.n() as f64;
    let lambda = result.lambda;

    let mut residual = problem.response().clone();
    residual -= design * &result.coefficients.beta;
    if let Some(x) = problem.extras() {
        residual -= x.values() * &result.coefficients.extra;
    }
    let gradient = design.transpose() * &residual / nf;
    let affine = if problem.constraints().n_constraints() > 0 {
        // μ C (t + ξ) with t = Cᵀβ at exit.
        let t = c.transpose() * &result.coefficients.beta;
        c * (t + &result.dual)
    } else {
        DVector::zeros(problem.p())
    };

    let mut worst = 0.0f64;
    for j in 0..problem.p() {
        let w = gradient[j] - affine[j];
        let b = result.coefficients.beta[j];
        let gap = if b != 0.0 { (w - lambda * b.signum()).abs() } else { (w.abs() - lambda).max(0.0) };
        worst = worst.max(gap);
    }
    if let Some(x) = problem.extras() {
        for q in 0..x.count() {
            worst = worst.max((x.values().column(q).dot(&residual) / nf).abs());
        }
    }
    worst
}
