//! Confidence intervals, p-values, interval-based variable selection,
//! support-restricted refitting and prediction.
//!
//! For the de-biased estimate with scaled covariance `D = M̃Σ̂M̃ᵀ`,
//!
//! ```text
//!     se_i  = σ̂ n^{−1/2} D_{ii}^{1/2}
//!     I_i   = [β̂ᵘ_i − δ_i, β̂ᵘ_i + δ_i],   δ_i = Φ⁻¹(1 − α/2) · se_i
//!     P_i   = 2 (1 − Φ(|β̂ᵘ_i| / se_i)),
//! ```
//!
//! a coordinate is selected when its interval excludes zero, and the
//! selected submodel can be refit by exact equality-constrained least
//! squares (the group constraints restricted to the selected columns, so
//! subcompositional structure survives the refit).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cdmm::Coefficients;
use crate::debias::DebiasResult;
use crate::error::{Error, Result};
use crate::model::{clr_transform, CompositionMatrix, ConstraintSet, RegressionProblem};
use crate::normal;

/// Interval, p-value and flags for one coordinate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinateInference {
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// `None` when the scaled covariance diagonal vanishes — no Gaussian
    /// statement is possible for such a coordinate.
    pub p_value: Option<f64>,
    /// True when `std_err` is exactly zero (degenerate coordinate).
    pub degenerate: bool,
}

/// Per-coordinate inference at a fixed nominal level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceResult {
    pub coordinates: Vec<CoordinateInference>,
    pub alpha: f64,
    pub sigma: f64,
    pub n: usize,
}

impl InferenceResult {
    pub fn estimates(&self) -> DVector<f64> {
        DVector::from_iterator(self.coordinates.len(), self.coordinates.iter().map(|c| c.estimate))
    }
}

/// Builds two-sided level `1 − α` intervals and p-values from a de-biased
/// fit. Degenerate coordinates (zero variance) are flagged rather than
/// rejected; a negative variance beyond numerical noise is an error.
pub fn confidence_intervals(
    debias: &DebiasResult,
    sigma_hat: f64,
    alpha: f64,
    n: usize,
) -> Result<InferenceResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(sigma_hat >= 0.0) || !sigma_hat.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise scale must be nonnegative and finite, got {sigma_hat}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let p = debias.estimate.len();
    let quantile = normal::quantile(1.0 - alpha / 2.0)?;
    let sqrt_n = (n as f64).sqrt();

    let mut coordinates = Vec::with_capacity(p);
    for i in 0..p {
        let variance = debias.cov_scaled[(i, i)];
        if variance < -1e-8 {
            return Err(Error::InvalidInput(format!(
                "scaled covariance diagonal {i} is negative ({variance})"
            )));
        }
        let estimate = debias.estimate[i];
        let std_err = sigma_hat * variance.max(0.0).sqrt() / sqrt_n;
        let degenerate = std_err == 0.0;
        let delta = quantile * std_err;
        let p_value = if degenerate {
            None
        } else {
            Some(2.0 * (1.0 - normal::cdf(estimate.abs() / std_err)))
        };
        coordinates.push(CoordinateInference {
            estimate,
            std_err,
            ci_lower: estimate - delta,
            ci_upper: estimate + delta,
            p_value,
            degenerate,
        });
    }
    Ok(InferenceResult { coordinates, alpha, sigma: sigma_hat, n })
}

/// Indices whose interval excludes zero.
pub fn select_by_ci(inference: &InferenceResult) -> Vec<usize> {
    inference
        .coordinates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ci_lower > 0.0 || c.ci_upper < 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Exact least squares on the selected columns, keeping each constraint's
/// restriction to the support (a group with a single selected member pins
/// that coefficient to zero). Extra covariates stay in the model
/// unpenalised. Solved through one KKT system; a singular system is
/// reported, not papered over.
pub fn refit_constrained_ols(
    problem: &RegressionProblem,
    support: &[usize],
) -> Result<Coefficients> {
    let p = problem.p();
    let n = problem.n();
    let q = problem.n_extras();
    let mut sorted: Vec<usize> = support.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != support.len() {
        return Err(Error::InvalidInput("support has repeated indices".into()));
    }
    if let Some(&bad) = sorted.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!(
            "support index {bad} out of range for {p} coefficients"
        )));
    }
    let s = sorted.len();

    if s == 0 {
        // Nothing selected: coefficients vanish; extras (if any) are still
        // fit so predictions remain the best mean-level model.
        let mut coef = Coefficients::zeros(p, q);
        if let Some(x) = problem.extras() {
            let gram = x.values().transpose() * x.values();
            let rhs = x.values().transpose() * problem.response();
            coef.extra = gram
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("extra covariates are collinear".into()))?;
        }
        return Ok(coef);
    }

    // Constraint columns that touch the support; the rest are identically
    // zero on the selected coordinates and would make the system singular.
    let c = problem.constraints().matrix();
    let r_all = problem.constraints().n_constraints();
    let touching: Vec<usize> = (0..r_all)
        .filter(|&k| sorted.iter().any(|&j| c[(j, k)] != 0.0))
        .collect();
    let r = touching.len();

    if s + q + r > n + r {
        // The unconstrained dimension of the refit is s + q − (rank of the
        // induced constraints) ≤ s + q; this cheap guard rejects clearly
        // overparameterized supports before the solve.
        return Err(Error::InvalidInput(format!(
            "support of {s} plus {q} covariates exceeds {n} observations"
        )));
    }

    let design = problem.design();
    let dim = s + q + r;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);

    // Gram block over [Z_S | X].
    let mut joint = DMatrix::<f64>::zeros(n, s + q);
    for (out, &j) in sorted.iter().enumerate() {
        joint.set_column(out, &design.column(j));
    }
    if let Some(x) = problem.extras() {
        for k in 0..q {
            joint.set_column(s + k, &x.values().column(k));
        }
    }
    let gram = joint.transpose() * &joint;
    kkt.view_mut((0, 0), (s + q, s + q)).copy_from(&gram);
    for (out, &j) in sorted.iter().enumerate() {
        for (col, &k) in touching.iter().enumerate() {
            kkt[(out, s + q + col)] = c[(j, k)];
            kkt[(s + q + col, out)] = c[(j, k)];
        }
    }
    rhs.rows_mut(0, s + q).copy_from(&(joint.transpose() * problem.response()));

    let solution = kkt.lu().solve(&rhs).ok_or_else(|| {
        Error::Singular(format!(
            "refit system is singular: support {sorted:?} with {r} induced constraints"
        ))
    })?;

    let mut coef = Coefficients::zeros(p, q);
    for (out, &j) in sorted.iter().enumerate() {
        coef.beta[j] = solution[out];
    }
    for k in 0..q {
        coef.extra[k] = solution[s + k];
    }
    Ok(coef)
}

/// Predictions and mean squared error on an independent problem built from
/// test data with the same transform and constraint set. Fitted values are
/// `ȳ_test + Z̃_c β̂ (+ X_c γ̂)` using the test problem's own centering.
pub fn predict(
    problem_test: &RegressionProblem,
    coefficients: &Coefficients,
) -> Result<(DVector<f64>, f64)> {
    let centered = problem_test.centered_fitted(&coefficients.beta, &coefficients.extra)?;
    let predictions = centered.map(|v| v + problem_test.response_mean());
    let diff = problem_test.response() - &centered;
    let mse = diff.norm_squared() / problem_test.n() as f64;
    Ok((predictions, mse))
}

/// Predictions for raw (uncentered) transformed rows, using the training
/// problem's centering statistics — the form needed when the evaluation
/// rows cannot center themselves (e.g. a single held-out observation).
pub fn predict_with_training_centering(
    problem_train: &RegressionProblem,
    rows: &DMatrix<f64>,
    extra_rows: Option<&DMatrix<f64>>,
    coefficients: &Coefficients,
) -> Result<DVector<f64>> {
    let p = problem_train.p();
    if rows.ncols() != p {
        return Err(Error::InvalidInput(format!(
            "evaluation rows have {} columns, problem has {p}",
            rows.ncols()
        )));
    }
    let q = problem_train.n_extras();
    match (q, extra_rows) {
        (0, None) => {}
        (_, Some(x)) if x.ncols() == q && x.nrows() == rows.nrows() => {}
        _ => {
            return Err(Error::InvalidInput(
                "extra-covariate rows do not match the training problem".into(),
            ))
        }
    }
    let means = problem_train.design_means();
    let mut predictions = DVector::<f64>::zeros(rows.nrows());
    for i in 0..rows.nrows() {
        let mut value = problem_train.response_mean();
        for j in 0..p {
            value += (rows[(i, j)] - means[j]) * coefficients.beta[j];
        }
        if let (Some(x), Some(train_x)) = (extra_rows, problem_train.extras()) {
            for k in 0..q {
                value += (x[(i, k)] - train_x.means()[k]) * coefficients.extra[k];
            }
        }
        predictions[i] = value;
    }
    Ok(predictions)
}

/// Leave-one-out cross-validation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoocvResult {
    /// Held-out prediction for each observation.
    pub predictions: DVector<f64>,
    /// 1 − PRESS / TSS.
    pub r_squared: f64,
}

/// Generic leave-one-out driver: refits with `fitter` on each n−1 subset
/// and predicts the held-out row with training-set centering.
pub fn loocv<F>(
    comp: &CompositionMatrix,
    constraints: &ConstraintSet,
    response: &DVector<f64>,
    fitter: F,
) -> Result<LoocvResult>
where
    F: Fn(&RegressionProblem) -> Result<Coefficients>,
{
    let n = comp.n_samples();
    if response.len() != n {
        return Err(Error::InvalidInput(format!(
            "response length {} does not match {} rows",
            response.len(),
            n
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput("leave-one-out needs at least 3 rows".into()));
    }
    let transformed = clr_transform(comp, constraints)?;
    let mut predictions = DVector::<f64>::zeros(n);
    for held_out in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&i| i != held_out).collect();
        let sub_comp = comp.select_rows(&keep)?;
        let sub_response = DVector::from_iterator(n - 1, keep.iter().map(|&i| response[i]));
        let sub_problem =
            crate::model::clr_design(&sub_comp, constraints.clone(), sub_response)?;
        let coef = fitter(&sub_problem)?;
        let row = transformed.row(held_out).clone_owned();
        let row_matrix = DMatrix::from_rows(&[row]);
        let pred = predict_with_training_centering(&sub_problem, &row_matrix, None, &coef)?;
        predictions[held_out] = pred[0];
    }
    let mean = response.mean();
    let tss: f64 = response.iter().map(|y| (y - mean).powi(2)).sum();
    let press: f64 = (0..n).map(|i| (response[i] - predictions[i]).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - press / tss } else { 0.0 };
    Ok(LoocvResult { predictions, r_squared })
}
