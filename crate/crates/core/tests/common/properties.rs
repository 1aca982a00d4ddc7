//! Randomized invariants shared between the property-test target and the
//! acceptance summary: each suite exposes a proptest strategy producing a
//! case plus a check function, so both targets exercise identical logic.

use complasso::debias::DebiasResult;
use complasso::diagnostics::{rip_constants, roc_constant, SUBSET_CAP};
use complasso::inference::{confidence_intervals, select_by_ci};
use complasso::model::{build_constraints, clr_design, replace_zeros};
use complasso::sim::{ConstraintMode, SimConfig};
use complasso::tuning::{scaled_lasso, ScaledLassoSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn fail(message: String) -> TestCaseError {
    TestCaseError::fail(message)
}

// ---------------------------------------------------------------------
// Suite 1: the projected log-ratio design is invariant when raw
// abundances are rescaled by arbitrary positive per-sample factors within
// each constraint group (and the composition is re-closed).
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DesignInvarianceCase {
    pub sizes: Vec<usize>,
    pub n: usize,
    pub log_raw: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub response: Vec<f64>,
}

pub fn design_invariance_strategy() -> impl Strategy<Value = DesignInvarianceCase> {
    (prop::collection::vec(2usize..=5, 1..=4), 8usize..=16).prop_flat_map(|(sizes, n)| {
        let p: usize = sizes.iter().sum();
        let groups = sizes.len();
        (
            Just(sizes),
            Just(n),
            prop::collection::vec(-2.0f64..2.0, n * p),
            prop::collection::vec(-1.5f64..1.5, n * groups),
            prop::collection::vec(-2.0f64..2.0, n),
        )
            .prop_map(|(sizes, n, log_raw, log_scale, response)| DesignInvarianceCase {
                sizes,
                n,
                log_raw,
                log_scale,
                response,
            })
    })
}

pub fn check_design_invariance(case: &DesignInvarianceCase) -> Result<(), TestCaseError> {
    let p: usize = case.sizes.iter().sum();
    let groups = case.sizes.len();
    let mut owner = vec![0usize; p];
    let mut start = 0;
    for (g, &size) in case.sizes.iter().enumerate() {
        for j in start..start + size {
            owner[j] = g;
        }
        start += size;
    }

    let raw = DMatrix::from_fn(case.n, p, |i, j| case.log_raw[i * p + j].exp());
    let rescaled = DMatrix::from_fn(case.n, p, |i, j| {
        raw[(i, j)] * case.log_scale[i * groups + owner[j]].exp()
    });
    let response = DVector::from_column_slice(&case.response);

    let build = |values: DMatrix<f64>| -> Result<DMatrix<f64>, TestCaseError> {
        let comp = replace_zeros(&values, 1.0).map_err(|e| fail(e.to_string()))?;
        let constraints = build_constraints(&case.sizes).map_err(|e| fail(e.to_string()))?;
        let problem = clr_design(&comp, constraints, response.clone())
            .map_err(|e| fail(e.to_string()))?;
        Ok(problem.design().clone())
    };

    let original = build(raw)?;
    let perturbed = build(rescaled)?;
    let gap = (&original - &perturbed).abs().max();
    prop_assert!(
        gap <= 1e-9,
        "projected design moved by {gap} under within-group rescaling"
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Suite 2: a coordinate's interval excludes zero exactly when its
// two-sided p-value falls below the interval's nominal level.
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DualityCase {
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    pub alpha: f64,
}

pub fn duality_strategy() -> impl Strategy<Value = DualityCase> {
    (1usize..=16).prop_flat_map(|p| {
        (
            prop::collection::vec(-3.0f64..3.0, p),
            prop::collection::vec(0.01f64..4.0, p),
            0.1f64..5.0,
            1usize..=1000,
            0.01f64..0.5,
        )
            .prop_map(|(estimates, variances, sigma, n, alpha)| DualityCase {
                estimates,
                variances,
                sigma,
                n,
                alpha,
            })
    })
}

pub fn check_duality(case: &DualityCase) -> Result<(), TestCaseError> {
    let p = case.estimates.len();
    let debias = DebiasResult {
        precision: DMatrix::identity(p, p),
        precision_projected: DMatrix::identity(p, p),
        estimate: DVector::from_column_slice(&case.estimates),
        cov_scaled: DMatrix::from_diagonal(&DVector::from_column_slice(&case.variances)),
        per_coord_feasible: vec![true; p],
        gamma_per_row: vec![0.1; p],
        iterations_per_row: vec![1; p],
        gamma: 0.1,
    };
    let inference = confidence_intervals(&debias, case.sigma, case.alpha, case.n)
        .map_err(|e| fail(e.to_string()))?;
    let selected = select_by_ci(&inference);
    for (i, coordinate) in inference.coordinates.iter().enumerate() {
        let p_value = coordinate
            .p_value
            .ok_or_else(|| fail(format!("coordinate {i} unexpectedly degenerate")))?;
        if (p_value - case.alpha).abs() <= 1e-10 {
            continue; // boundary ties are float-order dependent by nature
        }
        prop_assert_eq!(
            selected.contains(&i),
            p_value < case.alpha,
            "coordinate {} breaks interval/p-value duality: p = {}, alpha = {}, ci = [{}, {}]",
            i,
            p_value,
            case.alpha,
            coordinate.ci_lower,
            coordinate.ci_upper
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Suite 3: rescaling the response by c > 0 rescales the jointly
// estimated noise level, penalty and coefficients by the same factor.
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EquivarianceCase {
    pub n: usize,
    pub p: usize,
    pub log_raw: Vec<f64>,
    pub response: Vec<f64>,
    pub scale: f64,
}

pub fn equivariance_strategy() -> impl Strategy<Value = EquivarianceCase> {
    (12usize..=24, 6usize..=10).prop_flat_map(|(n, p)| {
        (
            Just(n),
            Just(p),
            prop::collection::vec(-2.0f64..2.0, n * p),
            prop::collection::vec(-2.0f64..2.0, n),
            prop_oneof![0.25f64..0.9, 1.1f64..4.0],
        )
            .prop_map(|(n, p, log_raw, response, scale)| EquivarianceCase {
                n,
                p,
                log_raw,
                response,
                scale,
            })
    })
}

pub fn check_scale_equivariance(case: &EquivarianceCase) -> Result<(), TestCaseError> {
    let raw = DMatrix::from_fn(case.n, case.p, |i, j| case.log_raw[i * case.p + j].exp());
    let comp = replace_zeros(&raw, 1.0).map_err(|e| fail(e.to_string()))?;
    // Mix a little signal into the noise so the fit is not always empty.
    let response = DVector::from_fn(case.n, |i, _| {
        case.response[i] + 1.5 * comp.values()[(i, 0)].ln()
    });

    let settings = ScaledLassoSettings::default();
    let solve = |y: DVector<f64>| -> Result<_, TestCaseError> {
        let constraints = build_constraints(&[case.p]).map_err(|e| fail(e.to_string()))?;
        let problem = clr_design(&comp, constraints, y).map_err(|e| fail(e.to_string()))?;
        scaled_lasso(&problem, &settings).map_err(|e| fail(e.to_string()))
    };

    let base = solve(response.clone())?;
    let scaled = solve(response * case.scale)?;
    prop_assume!(base.sigma > 1e-4 && !base.sigma_floored && !scaled.sigma_floored);

    let sigma_gap = (scaled.sigma - case.scale * base.sigma).abs() / (case.scale * base.sigma);
    prop_assert!(
        sigma_gap <= 1e-3,
        "noise scale is not equivariant: {} vs {} x {}",
        scaled.sigma,
        case.scale,
        base.sigma
    );
    let lambda_gap =
        (scaled.lambda - case.scale * base.lambda).abs() / (case.scale * base.lambda);
    prop_assert!(
        lambda_gap <= 1e-3,
        "penalty is not equivariant: {} vs {} x {}",
        scaled.lambda,
        case.scale,
        base.lambda
    );
    for j in 0..case.p {
        let expected = case.scale * base.fit.coefficients.beta[j];
        let got = scaled.fit.coefficients.beta[j];
        prop_assert!(
            (got - expected).abs() <= 1e-3 * (1.0 + expected.abs()),
            "coefficient {j} is not equivariant: {got} vs {expected}"
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Suite 4: the synthetic-data generator is a pure function of
// (configuration, stream index).
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DeterminismCase {
    pub p: usize,
    pub n: usize,
    pub zeta: f64,
    pub seed: u64,
    pub stream: u64,
    pub mode: ConstraintMode,
}

pub fn determinism_strategy() -> impl Strategy<Value = DeterminismCase> {
    (
        45usize..=56,
        2usize..=24,
        -0.85f64..0.85,
        any::<u64>(),
        any::<u64>(),
        prop_oneof![
            Just(ConstraintMode::Multiple),
            Just(ConstraintMode::One),
            Just(ConstraintMode::None),
            Just(ConstraintMode::Misspecified),
        ],
    )
        .prop_map(|(p, n, zeta, seed, stream, mode)| DeterminismCase {
            p,
            n,
            zeta,
            seed,
            stream,
            mode,
        })
}

pub fn check_generator_determinism(case: &DeterminismCase) -> Result<(), TestCaseError> {
    let config = SimConfig::new(case.p, case.n, case.zeta, case.seed, case.mode)
        .map_err(|e| fail(e.to_string()))?;
    let (comp_a, response_a) =
        complasso::sim::gen_dataset(&config, case.stream).map_err(|e| fail(e.to_string()))?;
    let (comp_b, response_b) =
        complasso::sim::gen_dataset(&config, case.stream).map_err(|e| fail(e.to_string()))?;
    prop_assert_eq!(
        comp_a.values(),
        comp_b.values(),
        "identical (config, stream) produced different compositions"
    );
    prop_assert_eq!(
        &response_a,
        &response_b,
        "identical (config, stream) produced different responses"
    );
    // A different stream must not replay the same draws.
    let (comp_c, _) = complasso::sim::gen_dataset(&config, case.stream.wrapping_add(1))
        .map_err(|e| fail(e.to_string()))?;
    prop_assert!(
        comp_a.values() != comp_c.values(),
        "distinct streams replayed identical compositions"
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Suite 5: the restricted orthogonality constant never exceeds the
// half-spread of the restricted isometry bounds of the combined order.
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PolarizationCase {
    pub n: usize,
    pub p: usize,
    pub k1: usize,
    pub k2: usize,
    pub entries: Vec<f64>,
}

pub fn polarization_strategy() -> impl Strategy<Value = PolarizationCase> {
    (4usize..=10, 4usize..=8, 1usize..=2, 1usize..=2).prop_flat_map(|(n, p, k1, k2)| {
        (
            Just(n),
            Just(p),
            Just(k1),
            Just(k2),
            prop::collection::vec(-2.0f64..2.0, n * p),
        )
            .prop_map(|(n, p, k1, k2, entries)| PolarizationCase { n, p, k1, k2, entries })
    })
}

pub fn check_polarization_bound(case: &PolarizationCase) -> Result<(), TestCaseError> {
    let design = DMatrix::from_fn(case.n, case.p, |i, j| {
        case.entries[i * case.p + j] / (case.n as f64).sqrt()
    });
    let theta = roc_constant(&design, case.k1, case.k2, SUBSET_CAP)
        .map_err(|e| fail(e.to_string()))?;
    let (lo, hi) = rip_constants(&design, case.k1 + case.k2, SUBSET_CAP)
        .map_err(|e| fail(e.to_string()))?;
    prop_assert!(
        theta <= 0.5 * (hi - lo) + 1e-10,
        "θ = {} exceeds half the isometry spread {}",
        theta,
        0.5 * (hi - lo)
    );
    Ok(())
}
