//! Data model: compositions, zero replacement, group constraints, and the
//! log-contrast regression design.
//!
//! A composition is a strictly positive matrix whose rows sum to one. The
//! regression design is built from its entrywise logarithm `Z = log X`
//! projected onto the orthogonal complement of the constraint span,
//!
//! ```text
//!     Z̃ = Z (I − P),    P = C Cᵀ,
//! ```
//!
//! where each column of `C` is the normalised indicator `1_g / √|g|` of one
//! component group. Projecting makes the design invariant to within-group
//! rescaling of the raw data, which is exactly the coherence property that
//! makes log-contrast coefficients interpretable on subcompositions.
//! Fitting is done without an intercept, so the response, the projected
//! design, and any extra covariates are mean-centred when a
//! [`RegressionProblem`] is assembled.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance for validating that composition rows sum to one.
const ROW_SUM_TOL: f64 = 1e-9;

/// A strictly positive matrix whose rows lie on the unit simplex.
#[derive(Debug, Clone)]
pub struct CompositionMatrix {
    values: DMatrix<f64>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl CompositionMatrix {
    /// Validates and wraps a matrix of proportions. Rows must sum to one
    /// within `1e-9` and every entry must be strictly positive and finite.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let row_ids = (0..values.nrows()).map(|i| format!("sample_{i}")).collect();
        let col_ids = (0..values.ncols()).map(|j| format!("component_{j}")).collect();
        Self::with_ids(values, row_ids, col_ids)
    }

    /// As [`CompositionMatrix::new`] but with caller-supplied labels.
    pub fn with_ids(values: DMatrix<f64>, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "composition needs at least 1 row and 2 columns, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if row_ids.len() != values.nrows() || col_ids.len() != values.ncols() {
            return Err(Error::InvalidInput(
                "label counts do not match composition dimensions".into(),
            ));
        }
        for i in 0..values.nrows() {
            let mut sum = 0.0;
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("composition entry ({i}, {j})")));
                }
                if v <= 0.0 {
                    return Err(Error::NonpositiveEntry { row: i, col: j });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL}"
                )));
            }
        }
        Ok(Self { values, row_ids, col_ids })
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    /// Returns a copy restricted to the given sample rows (used by
    /// cross-validation drivers).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.n_samples() {
                return Err(Error::InvalidInput(format!("row index {r} out of range")));
            }
        }
        let values = DMatrix::from_fn(rows.len(), self.n_components(), |i, j| {
            self.values[(rows[i], j)]
        });
        let row_ids = rows.iter().map(|&r| self.row_ids[r].clone()).collect();
        Self::with_ids(values, row_ids, self.col_ids.clone())
    }
}

/// Replaces zero counts by a pseudo-count and closes each row to the
/// simplex. Positive entries are left untouched before renormalisation, so
/// `(0, 10)` with pseudo-count `0.5` becomes `(0.5/10.5, 10/10.5)`.
pub fn replace_zeros(raw: &DMatrix<f64>, pseudo: f64) -> Result<CompositionMatrix> {
    if !(pseudo > 0.0) || !pseudo.is_finite() {
        return Err(Error::InvalidInput(format!(
            "pseudo-count must be a positive finite number, got {pseudo}"
        )));
    }
    let mut out = DMatrix::zeros(raw.nrows(), raw.ncols());
    for i in 0..raw.nrows() {
        let mut positive_mass = 0.0;
        for j in 0..raw.ncols() {
            let v = raw[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("raw entry ({i}, {j})")));
            }
            if v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "raw entry ({i}, {j}) is negative ({v}); counts or proportions expected"
                )));
            }
            positive_mass += v;
        }
        if positive_mass <= 0.0 {
            return Err(Error::AllZeroRow { row: i });
        }
        let mut sum = 0.0;
        for j in 0..raw.ncols() {
            let v = raw[(i, j)];
            let filled = if v == 0.0 { pseudo } else { v };
            out[(i, j)] = filled;
            sum += filled;
        }
        for j in 0..raw.ncols() {
            out[(i, j)] /= sum;
        }
    }
    CompositionMatrix::new(out)
}

/// Zero-sum constraints over groups of components.
///
/// The constraint matrix has one orthonormal column per group, so `Cᵀ C`
/// is the identity and `P = C Cᵀ` is the orthogonal projector onto the
/// constraint span. The empty set (no constraints, `P = 0`) is valid and
/// produces ordinary unconstrained regression.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    dim: usize,
    groups: Vec<Vec<usize>>,
    matrix: DMatrix<f64>,
    projector: DMatrix<f64>,
}

impl ConstraintSet {
    /// No constraints: the projector is zero and the log-contrast design
    /// reduces to plain log-proportions.
    pub fn none(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("constraint dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            groups: Vec::new(),
            matrix: DMatrix::zeros(dim, 0),
            projector: DMatrix::zeros(dim, dim),
        })
    }

    /// Builds constraints from explicit member-index groups. Groups must be
    /// disjoint, each with at least two members.
    pub fn from_groups(dim: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for (g, members) in groups.iter().enumerate() {
            if members.len() < 2 {
                return Err(Error::GroupTooSmall { index: g, size: members.len() });
            }
            for &j in members {
                if j >= dim {
                    return Err(Error::InvalidInput(format!(
                        "group {g} refers to component {j}, but dimension is {dim}"
                    )));
                }
                if seen[j] {
                    return Err(Error::InvalidInput(format!(
                        "component {j} appears in more than one group"
                    )));
                }
                seen[j] = true;
            }
        }
        let mut matrix = DMatrix::zeros(dim, groups.len());
        for (g, members) in groups.iter().enumerate() {
            let w = 1.0 / (members.len() as f64).sqrt();
            for &j in members {
                matrix[(j, g)] = w;
            }
        }
        let projector = &matrix * matrix.transpose();
        Ok(Self { dim, groups, matrix, projector })
    }

    /// Wraps an arbitrary matrix with orthonormal columns. Intended for
    /// design diagnostics on hand-crafted constraints; group-aware
    /// operations (such as support-restricted refits) are unavailable.
    pub fn from_orthonormal(matrix: DMatrix<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim == 0 {
            return Err(Error::InvalidInput("constraint matrix has no rows".into()));
        }
        let gram = matrix.transpose() * &matrix;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - want).abs() > 1e-8 {
                    return Err(Error::InvalidInput(
                        "constraint columns are not orthonormal".into(),
                    ));
                }
            }
        }
        let projector = &matrix * matrix.transpose();
        Ok(Self { dim, groups: Vec::new(), matrix, projector })
    }

    /// Number of components `p`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of constraints `r` (columns of the constraint matrix).
    pub fn n_constraints(&self) -> usize {
        self.matrix.ncols()
    }

    /// Member indices per group; empty for constraint sets not built from
    /// groups.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// The `p × r` orthonormal constraint matrix `C`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The projector `P = C Cᵀ` onto the constraint span.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// Diagonal of the projector; entries are `1/|g|` for grouped
    /// components and `0` for unconstrained ones.
    pub fn projector_diagonal(&self) -> DVector<f64> {
        self.projector.diagonal()
    }

    /// `Cᵀ v`, the vector of constraint values at `v`.
    pub fn constraint_values(&self, v: &DVector<f64>) -> DVector<f64> {
        self.matrix.transpose() * v
    }

    /// Largest absolute constraint violation `‖Cᵀ v‖_∞` (zero when there
    /// are no constraints).
    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        if self.n_constraints() == 0 {
            0.0
        } else {
            self.constraint_values(v).amax()
        }
    }

    /// Applies `I − P` to a vector.
    pub fn project_complement(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.n_constraints() == 0 {
            return v.clone();
        }
        v - &self.matrix * (self.matrix.transpose() * v)
    }

    /// Applies `I − P` on the right of a matrix: `A ← A (I − P)`.
    pub fn project_complement_rows(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        if self.n_constraints() == 0 {
            return a.clone();
        }
        a - (a * &self.matrix) * self.matrix.transpose()
    }
}

/// Contiguous-block constraints from a list of group sizes; block `g`
/// covers the next `group_sizes[g]` components. This is the layout used in
/// file input, where taxa are ordered by their taxonomic group.
pub fn build_constraints(group_sizes: &[usize]) -> Result<ConstraintSet> {
    if group_sizes.is_empty() {
        return Err(Error::InvalidInput(
            "at least one group size is required; use ConstraintSet::none for no constraints".into(),
        ));
    }
    let dim: usize = group_sizes.iter().sum();
    let mut groups = Vec::with_capacity(group_sizes.len());
    let mut start = 0;
    for &size in group_sizes {
        groups.push((start..start + size).collect());
        start += size;
    }
    ConstraintSet::from_groups(dim, groups)
}

/// Extra (non-compositional) covariates, stored mean-centred.
#[derive(Debug, Clone)]
pub struct ExtraCovariates {
    values: DMatrix<f64>,
    means: DVector<f64>,
    names: Vec<String>,
}

impl ExtraCovariates {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn count(&self) -> usize {
        self.values.ncols()
    }
}

/// A ready-to-fit regression problem: centred response, centred projected
/// log design, the constraint set, and optional centred extra covariates.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    design: DMatrix<f64>,
    design_means: DVector<f64>,
    response: DVector<f64>,
    response_mean: f64,
    constraints: ConstraintSet,
    extras: Option<ExtraCovariates>,
    component_ids: Vec<String>,
}

/// Uncentred log-contrast transform `Z̃ = log(X) (I − P)`.
///
/// Within a fully constrained group this subtracts the group mean of the
/// log proportions, e.g. proportions `(a, b)` in one group map to
/// `(log(a/b)/2, −log(a/b)/2)`.
pub fn clr_transform(comp: &CompositionMatrix, constraints: &ConstraintSet) -> Result<DMatrix<f64>> {
    if constraints.dim() != comp.n_components() {
        return Err(Error::InvalidInput(format!(
            "constraint dimension {} does not match {} components",
            constraints.dim(),
            comp.n_components()
        )));
    }
    let z = comp.values().map(f64::ln);
    Ok(constraints.project_complement_rows(&z))
}

/// Assembles a [`RegressionProblem`] without extra covariates.
pub fn clr_design(
    comp: &CompositionMatrix,
    constraints: ConstraintSet,
    response: DVector<f64>,
) -> Result<RegressionProblem> {
    build_problem(comp, constraints, response, None)
}

/// Assembles a [`RegressionProblem`] with extra unpenalised covariates
/// (one column per covariate, in sample order).
pub fn clr_design_with_covariates(
    comp: &CompositionMatrix,
    constraints: ConstraintSet,
    response: DVector<f64>,
    covariates: DMatrix<f64>,
    names: Vec<String>,
) -> Result<RegressionProblem> {
    build_problem(comp, constraints, response, Some((covariates, names)))
}

fn build_problem(
    comp: &CompositionMatrix,
    constraints: ConstraintSet,
    response: DVector<f64>,
    extras: Option<(DMatrix<f64>, Vec<String>)>,
) -> Result<RegressionProblem> {
    let n = comp.n_samples();
    if response.len() != n {
        return Err(Error::InvalidInput(format!(
            "response has {} entries for {n} samples",
            response.len()
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response".into()));
    }
    let z_tilde = clr_transform(comp, &constraints)?;
    let (design, design_means) = center_columns(&z_tilde);
    let response_mean = response.mean();
    let response = response.add_scalar(-response_mean);

    let extras = match extras {
        None => None,
        Some((values, names)) => {
            if values.nrows() != n {
                return Err(Error::InvalidInput(format!(
                    "covariate matrix has {} rows for {n} samples",
                    values.nrows()
                )));
            }
            if names.len() != values.ncols() {
                return Err(Error::InvalidInput(
                    "covariate name count does not match column count".into(),
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("extra covariates".into()));
            }
            let (centered, means) = center_columns(&values);
            Some(ExtraCovariates { values: centered, means, names })
        }
    };

    Ok(RegressionProblem {
        design,
        design_means,
        response,
        response_mean,
        constraints,
        extras,
        component_ids: comp.col_ids().to_vec(),
    })
}

fn center_columns(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows() as f64;
    let means = DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.sum() / n));
    let mut centered = a.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (centered, means)
}

impl RegressionProblem {
    /// Builds a problem directly from a design matrix instead of a
    /// composition: the design is projected onto the constraint complement
    /// and column-centred, the response is mean-centred. Useful for solver
    /// studies on synthetic designs that are not log-compositions.
    pub fn from_design(
        design: DMatrix<f64>,
        constraints: ConstraintSet,
        response: DVector<f64>,
    ) -> Result<Self> {
        if constraints.dim() != design.ncols() {
            return Err(Error::InvalidInput(format!(
                "constraint dimension {} does not match {} design columns",
                constraints.dim(),
                design.ncols()
            )));
        }
        if response.len() != design.nrows() {
            return Err(Error::InvalidInput(format!(
                "response has {} entries for {} rows",
                response.len(),
                design.nrows()
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design".into()));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        let projected = constraints.project_complement_rows(&design);
        let (design, design_means) = center_columns(&projected);
        let response_mean = response.mean();
        let response = response.add_scalar(-response_mean);
        let component_ids = (0..design.ncols()).map(|j| format!("component_{j}")).collect();
        Ok(Self {
            design,
            design_means,
            response,
            response_mean,
            constraints,
            extras: None,
            component_ids,
        })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// Number of compositional components.
    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// Number of extra covariates (zero when none were supplied).
    pub fn n_extras(&self) -> usize {
        self.extras.as_ref().map_or(0, ExtraCovariates::count)
    }

    /// Centred projected log design `Z̃` (column means removed).
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Column means that were removed from the projected design.
    pub fn design_means(&self) -> &DVector<f64> {
        &self.design_means
    }

    /// Centred response.
    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    /// Mean removed from the response.
    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn extras(&self) -> Option<&ExtraCovariates> {
        self.extras.as_ref()
    }

    pub fn component_ids(&self) -> &[String] {
        &self.component_ids
    }

    /// Fitted values `Z̃ β + X γ` in centred coordinates.
    pub fn centered_fitted(&self, beta: &DVector<f64>, extra: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p() {
            return Err(Error::InvalidInput(format!(
                "coefficient vector has {} entries for {} components",
                beta.len(),
                self.p()
            )));
        }
        let mut fitted = &self.design * beta;
        if let Some(x) = &self.extras {
            if extra.len() != x.count() {
                return Err(Error::InvalidInput(format!(
                    "extra coefficient vector has {} entries for {} covariates",
                    extra.len(),
                    x.count()
                )));
            }
            fitted += x.values() * extra;
        } else if extra.len() != 0 {
            return Err(Error::InvalidInput(
                "extra coefficients supplied but the problem has no extra covariates".into(),
            ));
        }
        Ok(fitted)
    }
}
