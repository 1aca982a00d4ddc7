//! Synthetic compositional-regression experiments: log-normal abundance
//! generation and a replication harness measuring interval coverage and
//! length, selection rates and test-set prediction error under different
//! constraint sets.
//!
//! Abundances are drawn row-wise as `w_i = exp(ν + z_i)` with
//! `z_i ~ N(0, Σ)`, `Σ_{jk} = ζ^{|j−k|}`, realised through the exact
//! stationary AR(1) recursion `z_1 = e_1`, `z_j = ζ z_{j−1} + √(1−ζ²) e_j`.
//! Compositions are the row-normalised `w`, the design is their log, and
//! the response is `y = Zβ + ε`, `ε ~ N(0, σ²I)`.
//!
//! Replications are independent substreams of one counter-based RNG, so
//! parallel runs reproduce serial runs bit for bit.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{debias, QpSettings};
use crate::error::{Error, Result};
use crate::inference::{confidence_intervals, predict, refit_constrained_ols, select_by_ci};
use crate::model::{build_constraints, clr_design, CompositionMatrix, ConstraintSet};
use crate::tuning::{scaled_lasso, ScaledLassoSettings};

/// Which constraint set the *fitting* pipeline uses. The data-generating
/// truth always satisfies the full block structure; `Misspecified`
/// deliberately fits with blocks the truth violates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// The generating block structure (eight zero-sum groups).
    Multiple,
    /// One zero-sum constraint across all coordinates.
    One,
    /// No constraints at all.
    None,
    /// Five wrong blocks whose sums the truth does not satisfy.
    Misspecified,
}

impl std::fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ConstraintMode::Multiple => "multiple",
            ConstraintMode::One => "one",
            ConstraintMode::None => "none",
            ConstraintMode::Misspecified => "misspecified",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiple" => Ok(ConstraintMode::Multiple),
            "one" => Ok(ConstraintMode::One),
            "none" => Ok(ConstraintMode::None),
            "misspecified" => Ok(ConstraintMode::Misspecified),
            other => Err(Error::InvalidInput(format!(
                "unknown constraint mode {other:?}; expected multiple, one, none or misspecified"
            ))),
        }
    }
}

/// Fully specifies one experimental cell. Construct with
/// [`SimConfig::new`] for the standard truth, then adjust fields as
/// needed; [`SimConfig::validate`] re-checks everything, including that
/// the truth satisfies the generating blocks exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub n: usize,
    /// AR(1) correlation of the log abundances, in (−1, 1).
    pub zeta: f64,
    pub n_reps: usize,
    pub sigma_noise: f64,
    pub seed: u64,
    pub alpha: f64,
    pub constraint_mode: ConstraintMode,
    /// True coefficient vector; must satisfy the generating blocks.
    pub beta_true: DVector<f64>,
    /// Log-abundance means; the default gives the first five components
    /// almost all of the mass.
    pub nu: DVector<f64>,
}

impl SimConfig {
    pub fn new(p: usize, n: usize, zeta: f64, seed: u64, mode: ConstraintMode) -> Result<Self> {
        let config = Self {
            p,
            n,
            zeta,
            n_reps: 100,
            sigma_noise: 0.5,
            seed,
            alpha: 0.05,
            constraint_mode: mode,
            beta_true: default_beta(p)?,
            nu: default_nu(p),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 45 {
            return Err(Error::InvalidInput(format!(
                "the standard truth and blocks need p ≥ 45, got {}",
                self.p
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput("need at least 2 observations".into()));
        }
        if !(self.zeta > -1.0 && self.zeta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "correlation must lie in (−1, 1), got {}",
                self.zeta
            )));
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidInput("need at least one replication".into()));
        }
        if !(self.sigma_noise >= 0.0 && self.sigma_noise.is_finite()) {
            return Err(Error::InvalidInput("noise level must be finite and ≥ 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.beta_true.len() != self.p || self.nu.len() != self.p {
            return Err(Error::InvalidInput(format!(
                "beta_true ({}) and nu ({}) must both have length p = {}",
                self.beta_true.len(),
                self.nu.len(),
                self.p
            )));
        }
        if self.beta_true.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("beta_true".into()));
        }
        if self.nu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nu".into()));
        }
        // Loud guard: the truth must satisfy the generating blocks
        // exactly, whatever constraint set the fit will use. A caller
        // supplying a different truth must supply a consistent one.
        let blocks = build_constraints(&design_group_sizes(self.p)?)?;
        let violation = blocks.max_violation(&self.beta_true);
        if violation > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "beta_true violates the generating constraint blocks by {violation:.3e}; \
                 supply a coefficient vector with zero block sums"
            )));
        }
        Ok(())
    }

    /// Indices of truly nonzero coefficients.
    pub fn true_support(&self) -> Vec<usize> {
        self.beta_true
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// The standard sparse truth: seven nonzero entries in the first two
/// blocks, each block summing to zero.
pub fn default_beta(p: usize) -> Result<DVector<f64>> {
    if p < 16 {
        return Err(Error::InvalidInput(format!(
            "the standard coefficient vector occupies 16 leading slots, got p = {p}"
        )));
    }
    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = 1.0;
    beta[1] = -0.8;
    beta[2] = 0.4;
    beta[5] = -0.6;
    beta[10] = -1.5;
    beta[12] = 1.2;
    beta[15] = 0.3;
    Ok(beta)
}

/// Log-abundance means: `p/2` for the first five components, 1 after.
pub fn default_nu(p: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| if j < 5 { p as f64 / 2.0 } else { 1.0 })
}

/// The generating block sizes: seven fixed groups and one tail group of
/// size `p − 40`.
pub fn design_group_sizes(p: usize) -> Result<Vec<usize>> {
    if p < 42 {
        return Err(Error::InvalidInput(format!(
            "block structure needs p ≥ 42 so the tail group has ≥ 2 members, got {p}"
        )));
    }
    Ok(vec![10, 6, 4, 3, 7, 2, 8, p - 40])
}

/// Deliberately wrong blocks for the misspecification study: five groups
/// whose boundaries cut across the generating ones.
pub fn misspecified_constraints(p: usize) -> Result<ConstraintSet> {
    if p < 32 {
        return Err(Error::InvalidInput(format!(
            "misspecified blocks need p ≥ 32 so the tail group has ≥ 2 members, got {p}"
        )));
    }
    build_constraints(&[5, 7, 11, 7, p - 30])
}

/// The constraint set each mode fits with.
pub fn constraints_for_mode(mode: ConstraintMode, p: usize) -> Result<ConstraintSet> {
    match mode {
        ConstraintMode::Multiple => build_constraints(&design_group_sizes(p)?),
        ConstraintMode::One => build_constraints(&[p]),
        ConstraintMode::None => ConstraintSet::none(p),
        ConstraintMode::Misspecified => misspecified_constraints(p),
    }
}

/// Latent log abundances for `n` rows: `ν_j + z_j` with AR(1) `z`.
fn draw_log_abundances(config: &SimConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, p) = (config.n, config.p);
    let innovation_scale = (1.0 - config.zeta * config.zeta).sqrt();
    let mut log_w = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let mut previous = 0.0;
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            let z = if j == 0 { e } else { config.zeta * previous + innovation_scale * e };
            previous = z;
            log_w[(i, j)] = config.nu[j] + z;
        }
    }
    log_w
}

/// One dataset from the stream `stream` of the config's seed: the
/// composition matrix and the response. Bit-deterministic in
/// `(config, stream)`.
pub fn gen_dataset(config: &SimConfig, stream: u64) -> Result<(CompositionMatrix, DVector<f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);

    let (n, p) = (config.n, config.p);
    let log_w = draw_log_abundances(config, &mut rng);

    let mut values = DMatrix::<f64>::zeros(n, p);
    let mut response = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..p {
            total += log_w[(i, j)].exp();
        }
        let log_total = total.ln();
        let mut signal = 0.0;
        for j in 0..p {
            values[(i, j)] = log_w[(i, j)].exp() / total;
            let beta_j = config.beta_true[j];
            if beta_j != 0.0 {
                // log proportion, computed without round-tripping exp/ln
                signal += (log_w[(i, j)] - log_total) * beta_j;
            }
        }
        response[i] = signal;
    }
    for i in 0..n {
        response[i] += config.sigma_noise * rng.sample::<f64, _>(StandardNormal);
    }
    Ok((CompositionMatrix::new(values)?, response))
}

/// Per-replication metrics kept for aggregation.
#[derive(Debug, Clone)]
struct RepOutcome {
    covered: Vec<bool>,
    lengths: Vec<f64>,
    tpr: f64,
    fpr: f64,
    pe_lasso: f64,
    pe_refit_lasso: f64,
    pe_refit_ci: f64,
}

/// Min / median / mean / max of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "summary of an empty sample");
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in summary"));
        let k = sorted.len();
        let median =
            if k % 2 == 1 { sorted[k / 2] } else { (sorted[k / 2 - 1] + sorted[k / 2]) / 2.0 };
        let mean = sorted.iter().sum::<f64>() / k as f64;
        Self { min: sorted[0], median, mean, max: sorted[k - 1] }
    }
}

/// Mean test-set prediction error of the three estimators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictionErrors {
    pub lasso: f64,
    pub refit_lasso: f64,
    pub refit_ci: f64,
}

/// Aggregated results for one cell.
///
/// `runtime_seconds` is deliberately excluded from serialisation so that
/// reports are byte-identical across equally-seeded runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub config: SimConfig,
    pub n_reps_completed: usize,
    pub n_reps_failed: usize,
    /// One message per failed replication, labelled by index; failures
    /// are excluded from every aggregate.
    pub failures: Vec<String>,
    /// Empirical coverage probability per coordinate.
    pub coverage_per_coordinate: Vec<f64>,
    /// Spread of the per-coordinate coverage probabilities.
    pub coverage_summary: SummaryStats,
    /// Interval-length spread across replications, per coordinate.
    pub length_per_coordinate: Vec<SummaryStats>,
    /// Spread of the per-coordinate mean lengths.
    pub length_summary: SummaryStats,
    /// Grand mean interval length.
    pub mean_ci_length: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub pred_error: PredictionErrors,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

fn run_single_rep(
    config: &SimConfig,
    constraints: &ConstraintSet,
    rep: usize,
) -> Result<RepOutcome> {
    let (train_comp, train_y) = gen_dataset(config, 2 * rep as u64)?;
    let (test_comp, test_y) = gen_dataset(config, 2 * rep as u64 + 1)?;

    let problem = clr_design(&train_comp, constraints.clone(), train_y)?;
    let tuned = scaled_lasso(&problem, &ScaledLassoSettings::default())?;
    let result = debias(&problem, &tuned.fit, tuned.gamma, &QpSettings::with_gamma(tuned.gamma))?;
    let inference = confidence_intervals(&result, tuned.sigma, config.alpha, config.n)?;

    let p = config.p;
    let mut covered = Vec::with_capacity(p);
    let mut lengths = Vec::with_capacity(p);
    for (j, c) in inference.coordinates.iter().enumerate() {
        let truth = config.beta_true[j];
        covered.push(c.ci_lower <= truth && truth <= c.ci_upper);
        lengths.push(c.ci_upper - c.ci_lower);
    }

    let selected = select_by_ci(&inference);
    let support = config.true_support();
    let true_positives = selected.iter().filter(|j| support.contains(j)).count();
    let false_positives = selected.len() - true_positives;
    // An empty truth makes the true-positive rate vacuous; report 1.
    let tpr = if support.is_empty() {
        1.0
    } else {
        true_positives as f64 / support.len() as f64
    };
    let fpr = false_positives as f64 / (p - support.len()) as f64;

    let refit_lasso = refit_constrained_ols(&problem, &tuned.fit.coefficients.support())?;
    let refit_ci = refit_constrained_ols(&problem, &selected)?;

    let test_problem = clr_design(&test_comp, constraints.clone(), test_y)?;
    let (_, pe_lasso) = predict(&test_problem, &tuned.fit.coefficients)?;
    let (_, pe_refit_lasso) = predict(&test_problem, &refit_lasso)?;
    let (_, pe_refit_ci) = predict(&test_problem, &refit_ci)?;

    Ok(RepOutcome { covered, lengths, tpr, fpr, pe_lasso, pe_refit_lasso, pe_refit_ci })
}

/// Runs every replication of one cell (in parallel when a thread pool is
/// available), excluding failed replications from the aggregates but
/// recording them.
pub fn run_experiment(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let constraints = constraints_for_mode(config.constraint_mode, config.p)?;

    let outcomes: Vec<std::result::Result<RepOutcome, String>> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| run_single_rep(config, &constraints, rep).map_err(|e| e.to_string()))
        .collect();

    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => completed.push(o),
            Err(msg) => failures.push(format!("replication {rep}: {msg}")),
        }
    }
    if completed.is_empty() {
        return Err(Error::NonConvergence(format!(
            "all {} replications failed; first failure: {}",
            config.n_reps, failures[0]
        )));
    }

    let p = config.p;
    let reps = completed.len() as f64;
    let mut coverage_per_coordinate = Vec::with_capacity(p);
    let mut length_per_coordinate = Vec::with_capacity(p);
    let mut mean_lengths = Vec::with_capacity(p);
    for j in 0..p {
        let hits = completed.iter().filter(|o| o.covered[j]).count();
        coverage_per_coordinate.push(hits as f64 / reps);
        let lengths: Vec<f64> = completed.iter().map(|o| o.lengths[j]).collect();
        let stats = SummaryStats::from_values(&lengths);
        mean_lengths.push(stats.mean);
        length_per_coordinate.push(stats);
    }

    let mean = |f: &dyn Fn(&RepOutcome) -> f64| -> f64 {
        completed.iter().map(|o| f(o)).sum::<f64>() / reps
    };
    let report = SimReport {
        schema_version: 1,
        config: config.clone(),
        n_reps_completed: completed.len(),
        n_reps_failed: failures.len(),
        failures,
        coverage_summary: SummaryStats::from_values(&coverage_per_coordinate),
        coverage_per_coordinate,
        length_summary: SummaryStats::from_values(&mean_lengths),
        length_per_coordinate,
        mean_ci_length: mean_lengths.iter().sum::<f64>() / p as f64,
        tpr: mean(&|o| o.tpr),
        fpr: mean(&|o| o.fpr),
        pred_error: PredictionErrors {
            lasso: mean(&|o| o.pe_lasso),
            refit_lasso: mean(&|o| o.pe_refit_lasso),
            refit_ci: mean(&|o| o.pe_refit_ci),
        },
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(report)
}
